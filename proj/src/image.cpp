#include "kexp/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace kexp {

uint8_t clamp_u8(double v) {
  const double r = std::floor(v + 0.5);
  if (r <= 0.0) return 0;
  if (r >= 255.0) return 255;
  return static_cast<uint8_t>(r);
}

namespace {

// Reads the next decimal token from a PNM header, skipping whitespace and
// '#' comments. Returns false at end of input.
bool next_pnm_int(const std::vector<uint8_t>& b, size_t& pos, int& out) {
  while (pos < b.size()) {
    const uint8_t ch = b[pos];
    if (ch == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(ch)) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) return false;
  long v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos] - '0');
    if (v > 1'000'000'000L) return false;
    ++pos;
  }
  out = static_cast<int>(v);
  return true;
}

}  // namespace

Image decode_ppm(const std::vector<uint8_t>& bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6')
    throw FormatError("ppm: bad magic, expected P6");
  size_t pos = 2;
  int w = 0, h = 0, maxval = 0;
  if (!next_pnm_int(bytes, pos, w) || !next_pnm_int(bytes, pos, h) ||
      !next_pnm_int(bytes, pos, maxval))
    throw FormatError("ppm: truncated or malformed header");
  if (w < 1 || h < 1) throw FormatError("ppm: bad dimensions");
  if (maxval != 255)
    throw UnsupportedError("ppm: only maxval 255 supported, got " +
                           std::to_string(maxval));
  // Exactly one whitespace byte separates the header from the payload.
  if (pos >= bytes.size() || !std::isspace(bytes[pos]))
    throw FormatError("ppm: missing payload separator");
  ++pos;
  const size_t need = static_cast<size_t>(w) * static_cast<size_t>(h) * 3;
  if (bytes.size() - pos < need) throw FormatError("ppm: truncated payload");
  Image img(w, h);
  std::copy(bytes.begin() + static_cast<long>(pos),
            bytes.begin() + static_cast<long>(pos + need), img.pixels.begin());
  return img;
}

std::vector<uint8_t> encode_ppm(const Image& img) {
  char header[64];
  const int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n",
                              img.width, img.height);
  std::vector<uint8_t> out(header, header + n);
  out.insert(out.end(), img.pixels.begin(), img.pixels.end());
  return out;
}

Image read_ppm_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  try {
    return decode_ppm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_ppm_file(const std::string& path, const Image& img) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  const std::vector<uint8_t> bytes = encode_ppm(img);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<long>(bytes.size()));
  if (!f) throw IoError("short write to " + path);
}

void write_pgm_file(const std::string& path, const Tensor4& heatmap) {
  if (heatmap.n() != 1 || heatmap.c() != 1)
    throw ContractError("pgm: expected [1,1,h,w], got " + heatmap.shape_str());
  const int64_t h = heatmap.h(), w = heatmap.w();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> row(static_cast<size_t>(w));
  for (int64_t y = 0; y < h; ++y) {
    for (int64_t x = 0; x < w; ++x)
      row[static_cast<size_t>(x)] =
          clamp_u8(255.0 * static_cast<double>(heatmap.data[static_cast<size_t>(y * w + x)]));
    f.write(reinterpret_cast<const char*>(row.data()), static_cast<long>(w));
  }
  if (!f) throw IoError("short write to " + path);
}

Image resize_bilinear(const Image& img, int new_w, int new_h) {
  if (new_w < 1 || new_h < 1) throw ContractError("resize: bad target size");
  if (new_w == img.width && new_h == img.height) return img;
  Image out(new_w, new_h);
  const double sy = static_cast<double>(img.height) / new_h;
  const double sx = static_cast<double>(img.width) / new_w;
  for (int y = 0; y < new_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::min(std::max(fy, 0.0), static_cast<double>(img.height - 1));
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < new_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::min(std::max(fx, 0.0), static_cast<double>(img.width - 1));
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double wx = fx - x0;
      for (int ch = 0; ch < 3; ++ch) {
        const double v = (1.0 - wy) * ((1.0 - wx) * img.at(x0, y0, ch) +
                                       wx * img.at(x1, y0, ch)) +
                         wy * ((1.0 - wx) * img.at(x0, y1, ch) +
                               wx * img.at(x1, y1, ch));
        out.at(x, y, ch) = clamp_u8(v);
      }
    }
  }
  return out;
}

Tensor4 images_to_tensor(const std::vector<const Image*>& imgs) {
  if (imgs.empty()) throw ContractError("images_to_tensor: empty batch");
  const int w = imgs[0]->width, h = imgs[0]->height;
  Tensor4 out(static_cast<int64_t>(imgs.size()), 3, h, w);
  for (size_t i = 0; i < imgs.size(); ++i) {
    const Image& img = *imgs[i];
    if (img.width != w || img.height != h)
      throw ContractError("images_to_tensor: mixed image sizes in batch");
    for (int ch = 0; ch < 3; ++ch) {
      float* plane = out.data.data() +
                     (static_cast<int64_t>(i) * 3 + ch) * static_cast<int64_t>(h) * w;
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          plane[static_cast<int64_t>(y) * w + x] =
              static_cast<float>(img.at(x, y, ch)) / 255.0f;
    }
  }
  return out;
}

Tensor4 image_to_tensor(const Image& img) {
  return images_to_tensor({&img});
}

}  // namespace kexp
