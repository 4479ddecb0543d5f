#include "kexp/augment.hpp"

#include <algorithm>
#include <cmath>

#include "kexp/errors.hpp"

namespace kexp {

void AugmentConfig::validate() const {
  auto prob = [](float p, const char* name) {
    if (!(p >= 0.f && p <= 1.f))
      throw ConfigError(std::string("augment: ") + name + " must be in [0,1]");
  };
  prob(brightness_contrast_prob, "brightness_contrast_prob");
  prob(jitter_prob, "jitter_prob");
  prob(blur_prob, "blur_prob");
  prob(jpeg_prob, "jpeg_prob");
  prob(shadow_prob, "shadow_prob");
  prob(affine_prob, "affine_prob");
  prob(pose_prob, "pose_prob");
  prob(hflip_prob, "hflip_prob");
  prob(vflip_prob, "vflip_prob");
  prob(saltpepper_prob, "saltpepper_prob");
  prob(saltpepper_density, "saltpepper_density");
  prob(erase_prob, "erase_prob");
  if (!(scale_lo > 0.f && scale_hi >= scale_lo))
    throw ConfigError("augment: scale range must be positive");
  if (jpeg_quality < 1 || jpeg_quality > 100)
    throw ConfigError("augment: jpeg_quality must be in [1,100]");
  for (int k : blur_kernel_choices)
    if (k < 1 || k % 2 == 0)
      throw ConfigError("augment: blur kernels must be odd");
}

// ---- appearance primitives ---------------------------------------------------

Image brightness_contrast(const Image& img, float contrast, float brightness) {
  Image out(img.width, img.height);
  for (size_t i = 0; i < img.pixels.size(); ++i) {
    // contrast pivots around mid-gray
    const float v = (static_cast<float>(img.pixels[i]) - 128.f) * contrast + 128.f +
                    brightness;
    out.pixels[i] = clamp_u8(v);
  }
  return out;
}

namespace {

void rgb_to_hsv(float r, float g, float b, float& h, float& s, float& v) {
  const float mx = std::max({r, g, b});
  const float mn = std::min({r, g, b});
  const float d = mx - mn;
  v = mx;
  s = mx <= 0.f ? 0.f : d / mx;
  if (d <= 0.f) {
    h = 0.f;
    return;
  }
  if (mx == r)
    h = std::fmod((g - b) / d + 6.f, 6.f) / 6.f;
  else if (mx == g)
    h = ((b - r) / d + 2.f) / 6.f;
  else
    h = ((r - g) / d + 4.f) / 6.f;
}

void hsv_to_rgb(float h, float s, float v, float& r, float& g, float& b) {
  const float hh = std::fmod(h, 1.f) * 6.f;
  const int sector = std::min(5, static_cast<int>(hh));
  const float f = hh - static_cast<float>(sector);
  const float p = v * (1.f - s);
  const float q = v * (1.f - s * f);
  const float t = v * (1.f - s * (1.f - f));
  switch (sector) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    default: r = v; g = p; b = q; break;
  }
}

}  // namespace

Image color_jitter(const Image& img, float hue_shift, float sat_factor,
                   float val_factor) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      float h, s, v;
      rgb_to_hsv(img.at(x, y, 0) / 255.f, img.at(x, y, 1) / 255.f,
                 img.at(x, y, 2) / 255.f, h, s, v);
      h = std::fmod(h + hue_shift + 1.f, 1.f);
      s = std::clamp(s * sat_factor, 0.f, 1.f);
      v = std::clamp(v * val_factor, 0.f, 1.f);
      float r, g, b;
      hsv_to_rgb(h, s, v, r, g, b);
      out.at(x, y, 0) = clamp_u8(255.0 * r);
      out.at(x, y, 1) = clamp_u8(255.0 * g);
      out.at(x, y, 2) = clamp_u8(255.0 * b);
    }
  return out;
}

namespace {

// reflect-101 border: ... 2 1 0 | 1 2 ...
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

}  // namespace

Image gaussian_blur(const Image& img, int kernel) {
  if (kernel < 1 || kernel % 2 == 0)
    throw ContractError("blur: kernel must be odd and positive");
  const int r = kernel / 2;
  const double sigma = 0.3 * ((kernel - 1) * 0.5 - 1.0) + 0.8;
  std::vector<double> w(static_cast<size_t>(kernel));
  double sum = 0.0;
  for (int i = 0; i < kernel; ++i) {
    const double d = i - r;
    w[static_cast<size_t>(i)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
    sum += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= sum;

  const int W = img.width, H = img.height;
  std::vector<float> tmp(static_cast<size_t>(W) * H * 3);
  // horizontal
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += w[static_cast<size_t>(i + r)] *
                 img.at(reflect_index(x + i, W), y, ch);
        tmp[(static_cast<size_t>(y) * W + x) * 3 + ch] = static_cast<float>(acc);
      }
  // vertical
  Image out(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i)
          acc += w[static_cast<size_t>(i + r)] *
                 tmp[(static_cast<size_t>(reflect_index(y + i, H)) * W + x) * 3 + ch];
        out.at(x, y, ch) = clamp_u8(acc);
      }
  return out;
}

namespace {

bool point_in_quad(double px, double py,
                   const std::array<std::array<double, 2>, 4>& poly) {
  bool in = false;
  for (int i = 0, j = 3; i < 4; j = i++) {
    const double xi = poly[static_cast<size_t>(i)][0], yi = poly[static_cast<size_t>(i)][1];
    const double xj = poly[static_cast<size_t>(j)][0], yj = poly[static_cast<size_t>(j)][1];
    if (((yi > py) != (yj > py)) &&
        (px < (xj - xi) * (py - yi) / (yj - yi) + xi))
      in = !in;
  }
  return in;
}

}  // namespace

std::array<std::array<double, 2>, 4> sample_shadow_quad(int w, int h, Rng& rng) {
  const int edge = static_cast<int>(rng.uniform_int(0, 3));
  double a = rng.next_double(), b = rng.next_double();
  if (a > b) std::swap(a, b);
  // two interior anchors
  const double ix1 = rng.uniform(0.1, 0.9), iy1 = rng.uniform(0.1, 0.9);
  const double ix2 = rng.uniform(0.1, 0.9), iy2 = rng.uniform(0.1, 0.9);
  const double W = w, H = h;
  switch (edge) {
    case 0:  // top
      return {{{a * W, 0.0}, {b * W, 0.0}, {std::max(ix1, ix2) * W, iy1 * H},
               {std::min(ix1, ix2) * W, iy2 * H}}};
    case 1:  // right
      return {{{W - 1, a * H}, {W - 1, b * H}, {ix1 * W, std::max(iy1, iy2) * H},
               {ix2 * W, std::min(iy1, iy2) * H}}};
    case 2:  // bottom
      return {{{a * W, H - 1}, {b * W, H - 1}, {std::max(ix1, ix2) * W, iy1 * H},
               {std::min(ix1, ix2) * W, iy2 * H}}};
    default:  // left
      return {{{0.0, a * H}, {0.0, b * H}, {ix1 * W, std::max(iy1, iy2) * H},
               {ix2 * W, std::min(iy1, iy2) * H}}};
  }
}

Image add_shadow(const Image& img, float factor,
                 const std::array<std::array<double, 2>, 4>& quad) {
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (point_in_quad(x, y, quad))
        for (int ch = 0; ch < 3; ++ch)
          out.at(x, y, ch) = clamp_u8(static_cast<float>(img.at(x, y, ch)) * factor);
  return out;
}

// ---- JPEG quality simulation ---------------------------------------------------

namespace {

// Standard luminance quantization table (JPEG Annex K).
const int kLumaTable[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  //
    12, 12, 14, 19, 26,  58,  60,  55,  //
    14, 13, 16, 24, 40,  57,  69,  56,  //
    14, 17, 22, 29, 51,  87,  80,  62,  //
    18, 22, 37, 56, 68,  109, 103, 77,  //
    24, 35, 55, 64, 81,  104, 113, 92,  //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99};

void scaled_table(int quality, int out[64]) {
  // IJG scaling: the low-quality branch is 5000/q, the high-quality branch
  // collapses the table toward all-ones.
  const int s = quality < 50 ? 5000 / quality : 200 - 2 * quality;
  for (int i = 0; i < 64; ++i)
    out[i] = std::clamp((kLumaTable[i] * s + 50) / 100, 1, 255);
}

void dct8x8(const double in[64], double out[64]) {
  static double cosv[8][8];
  static bool init = false;
  if (!init) {
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        cosv[u][x] = std::cos((2.0 * x + 1.0) * u * M_PI / 16.0);
    init = true;
  }
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int u = 0; u < 8; ++u)
    for (int v = 0; v < 8; ++v) {
      double acc = 0.0;
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          acc += in[y * 8 + x] * cosv[u][y] * cosv[v][x];
      const double cu = u == 0 ? inv_sqrt2 : 1.0;
      const double cv = v == 0 ? inv_sqrt2 : 1.0;
      out[u * 8 + v] = 0.25 * cu * cv * acc;
    }
}

void idct8x8(const double in[64], double out[64]) {
  static double cosv[8][8];
  static bool init = false;
  if (!init) {
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        cosv[u][x] = std::cos((2.0 * x + 1.0) * u * M_PI / 16.0);
    init = true;
  }
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double acc = 0.0;
      for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
          const double cu = u == 0 ? inv_sqrt2 : 1.0;
          const double cv = v == 0 ? inv_sqrt2 : 1.0;
          acc += cu * cv * in[u * 8 + v] * cosv[u][y] * cosv[v][x];
        }
      out[y * 8 + x] = 0.25 * acc;
    }
}

}  // namespace

Image jpeg_degrade(const Image& img, int quality) {
  if (quality < 1 || quality > 100)
    throw ContractError("jpeg_degrade: quality must be in [1,100]");
  int table[64];
  scaled_table(quality, table);
  Image out = img;
  const int W = img.width, H = img.height;
  double block[64], coef[64], rec[64];
  for (int ch = 0; ch < 3; ++ch)
    for (int by = 0; by < H; by += 8)
      for (int bx = 0; bx < W; bx += 8) {
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x) {
            // edge blocks replicate the border pixel
            const int sy = std::min(by + y, H - 1);
            const int sx = std::min(bx + x, W - 1);
            block[y * 8 + x] = static_cast<double>(img.at(sx, sy, ch)) - 128.0;
          }
        dct8x8(block, coef);
        for (int i = 0; i < 64; ++i) {
          const double q = static_cast<double>(table[i]);
          coef[i] = std::round(coef[i] / q) * q;
        }
        idct8x8(coef, rec);
        for (int y = 0; y < 8 && by + y < H; ++y)
          for (int x = 0; x < 8 && bx + x < W; ++x)
            out.at(bx + x, by + y, ch) = clamp_u8(rec[y * 8 + x] + 128.0);
      }
  return out;
}

// ---- geometric primitives -------------------------------------------------------

Image warp_affine(const Image& img, double angle_deg, double tx, double ty,
                  double scale) {
  if (scale <= 0.0) throw ContractError("warp_affine: scale must be positive");
  const double th = angle_deg * M_PI / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const double cx = (img.width - 1) * 0.5, cy = (img.height - 1) * 0.5;
  Image out(img.width, img.height);
  // Inverse map: undo translation, rotation and scale about the center.
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double dx = x - cx - tx, dy = y - cy - ty;
      const double sx = cx + (c * dx + s * dy) / scale;
      const double sy = cy + (-s * dx + c * dy) / scale;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int oy = 0; oy <= 1; ++oy)
          for (int ox = 0; ox <= 1; ++ox) {
            const int px = x0 + ox, py = y0 + oy;
            if (px < 0 || px >= img.width || py < 0 || py >= img.height) continue;
            const double w = (ox ? fx : 1.0 - fx) * (oy ? fy : 1.0 - fy);
            acc += w * img.at(px, py, ch);
          }
        out.at(x, y, ch) = clamp_u8(acc);
      }
    }
  return out;
}

namespace {

// Gaussian elimination with partial pivoting for the 8x8 homography system.
void solve8(double a[8][9]) {
  for (int col = 0; col < 8; ++col) {
    int piv = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    for (int k = 0; k <= 8; ++k) std::swap(a[col][k], a[piv][k]);
    const double d = a[col][col];
    if (std::abs(d) < 1e-12) throw ContractError("perspective: degenerate corners");
    for (int k = col; k <= 8; ++k) a[col][k] /= d;
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col];
      for (int k = col; k <= 8; ++k) a[r][k] -= f * a[col][k];
    }
  }
}

}  // namespace

Image warp_perspective(const Image& img,
                       const std::array<std::array<double, 2>, 4>& corner_disp) {
  const double W = img.width - 1, H = img.height - 1;
  const double dst[4][2] = {{0, 0}, {W, 0}, {W, H}, {0, H}};
  double src[4][2];
  for (int i = 0; i < 4; ++i) {
    src[i][0] = dst[i][0] + corner_disp[static_cast<size_t>(i)][0] * img.width;
    src[i][1] = dst[i][1] + corner_disp[static_cast<size_t>(i)][1] * img.height;
  }
  // Homography h mapping dst -> src, h33 = 1.
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = dst[i][0], y = dst[i][1];
    const double u = src[i][0], v = src[i][1];
    double* r0 = a[2 * i];
    double* r1 = a[2 * i + 1];
    r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -u * x; r0[7] = -u * y; r0[8] = u;
    r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -v * x; r1[7] = -v * y; r1[8] = v;
  }
  solve8(a);
  const double h0 = a[0][8], h1 = a[1][8], h2 = a[2][8], h3 = a[3][8],
               h4 = a[4][8], h5 = a[5][8], h6 = a[6][8], h7 = a[7][8];
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      const double den = h6 * x + h7 * y + 1.0;
      const double sx = (h0 * x + h1 * y + h2) / den;
      const double sy = (h3 * x + h4 * y + h5) / den;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int oy = 0; oy <= 1; ++oy)
          for (int ox = 0; ox <= 1; ++ox) {
            const int px = x0 + ox, py = y0 + oy;
            if (px < 0 || px >= img.width || py < 0 || py >= img.height) continue;
            const double w = (ox ? fx : 1.0 - fx) * (oy ? fy : 1.0 - fy);
            acc += w * img.at(px, py, ch);
          }
        out.at(x, y, ch) = clamp_u8(acc);
      }
    }
  return out;
}

Image hflip(const Image& img) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int ch = 0; ch < 3; ++ch)
        out.at(x, y, ch) = img.at(img.width - 1 - x, y, ch);
  return out;
}

Image vflip(const Image& img) {
  Image out(img.width, img.height);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int ch = 0; ch < 3; ++ch)
        out.at(x, y, ch) = img.at(x, img.height - 1 - y, ch);
  return out;
}

// ---- occlusion primitives --------------------------------------------------------

Image salt_pepper(const Image& img, float density, Rng& rng) {
  Image out = img;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      if (rng.next_double() < static_cast<double>(density)) {
        const uint8_t v = (rng.next_u64() & 1) ? 255 : 0;
        out.at(x, y, 0) = v;
        out.at(x, y, 1) = v;
        out.at(x, y, 2) = v;
      }
  return out;
}

EraseRect sample_erase_rect(int img_w, int img_h, const AugmentConfig& cfg,
                            Rng& rng) {
  const double frac = rng.uniform(cfg.erase_area_lo, cfg.erase_area_hi);
  const double aspect = rng.uniform(cfg.erase_aspect_lo, cfg.erase_aspect_hi);
  const double area = frac * img_w * img_h;
  EraseRect r;
  r.w = std::clamp(static_cast<int>(std::lround(std::sqrt(area * aspect))), 1, img_w);
  r.h = std::clamp(static_cast<int>(std::lround(std::sqrt(area / aspect))), 1, img_h);
  r.x0 = static_cast<int>(rng.uniform_int(0, img_w - r.w));
  r.y0 = static_cast<int>(rng.uniform_int(0, img_h - r.h));
  return r;
}

Image erase_rect(const Image& img, const EraseRect& r, Rng& rng) {
  Image out = img;
  for (int y = r.y0; y < r.y0 + r.h; ++y)
    for (int x = r.x0; x < r.x0 + r.w; ++x)
      for (int ch = 0; ch < 3; ++ch)
        out.at(x, y, ch) = static_cast<uint8_t>(rng.uniform_int(0, 255));
  return out;
}

// ---- stages ------------------------------------------------------------------------

namespace {

void note(std::vector<std::string>* applied, const char* op) {
  if (applied) applied->emplace_back(op);
}

}  // namespace

Image appearance_stage(const Image& img, const AugmentConfig& cfg, Rng& rng,
                       std::vector<std::string>* applied) {
  Image out = img;
  if (rng.next_double() < cfg.brightness_contrast_prob) {
    const float contrast =
        static_cast<float>(rng.uniform(cfg.contrast_lo, cfg.contrast_hi));
    const float brightness =
        static_cast<float>(rng.uniform(-cfg.brightness_shift, cfg.brightness_shift));
    out = brightness_contrast(out, contrast, brightness);
    note(applied, "brightness_contrast");
  }
  if (rng.next_double() < cfg.jitter_prob) {
    const float dh = static_cast<float>(rng.uniform(-cfg.hue_delta, cfg.hue_delta));
    const float sf =
        static_cast<float>(rng.uniform(1.0 - cfg.sat_delta, 1.0 + cfg.sat_delta));
    const float vf = static_cast<float>(
        rng.uniform(1.0 - cfg.bright_delta, 1.0 + cfg.bright_delta));
    out = color_jitter(out, dh, sf, vf);
    note(applied, "jitter");
  }
  if (rng.next_double() < cfg.blur_prob) {
    const int k = cfg.blur_kernel_choices[static_cast<size_t>(rng.uniform_int(0, 2))];
    out = gaussian_blur(out, k);
    note(applied, "blur");
  }
  if (rng.next_double() < cfg.shadow_prob) {
    const auto quad = sample_shadow_quad(out.width, out.height, rng);
    out = add_shadow(out, cfg.shadow_factor, quad);
    note(applied, "shadow");
  }
  if (rng.next_double() < cfg.jpeg_prob) {
    out = jpeg_degrade(out, cfg.jpeg_quality);
    note(applied, "jpeg");
  }
  return out;
}

Image geometric_stage(const Image& img, const AugmentConfig& cfg, Rng& rng,
                      std::vector<std::string>* applied) {
  Image out = img;
  if (rng.next_double() < cfg.affine_prob) {
    const double th = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg);
    const double tx =
        rng.uniform(-cfg.translate_frac, cfg.translate_frac) * img.width;
    const double ty =
        rng.uniform(-cfg.translate_frac, cfg.translate_frac) * img.height;
    const double sc = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    out = warp_affine(out, th, tx, ty, sc);
    note(applied, "affine");
  }
  if (rng.next_double() < cfg.pose_prob) {
    std::array<std::array<double, 2>, 4> disp;
    for (auto& d : disp) {
      d[0] = rng.uniform(-cfg.pose_max_frac, cfg.pose_max_frac);
      d[1] = rng.uniform(-cfg.pose_max_frac, cfg.pose_max_frac);
    }
    out = warp_perspective(out, disp);
    note(applied, "perspective");
  }
  if (rng.next_double() < cfg.hflip_prob) {
    out = hflip(out);
    note(applied, "hflip");
  }
  if (rng.next_double() < cfg.vflip_prob) {
    out = vflip(out);
    note(applied, "vflip");
  }
  return out;
}

Image occlusion_stage(const Image& img, const AugmentConfig& cfg, Rng& rng,
                      std::vector<std::string>* applied) {
  Image out = img;
  if (rng.next_double() < cfg.saltpepper_prob) {
    out = salt_pepper(out, cfg.saltpepper_density, rng);
    note(applied, "saltpepper");
  }
  if (rng.next_double() < cfg.erase_prob) {
    const EraseRect r = sample_erase_rect(out.width, out.height, cfg, rng);
    out = erase_rect(out, r, rng);
    note(applied, "erase");
  }
  return out;
}

Image apply_pipeline(const Image& img, const AugmentConfig& cfg,
                     uint64_t sample_index, std::vector<std::string>* applied) {
  Rng rng = Rng::child(cfg.master_seed, sample_index);
  Image out = appearance_stage(img, cfg, rng, applied);
  out = geometric_stage(out, cfg, rng, applied);
  out = occlusion_stage(out, cfg, rng, applied);
  return out;
}

}  // namespace kexp
