#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kexp/tensor.hpp"

namespace kexp {

// 8-bit RGB image, interleaved row-major storage. Float math happens at the
// pipeline boundaries; every float -> byte conversion rounds half up.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> pixels;  // size = width * height * 3

  Image() = default;
  Image(int w, int h, uint8_t fill = 0)
      : width(w), height(h),
        pixels(static_cast<size_t>(w) * static_cast<size_t>(h) * 3, fill) {
    if (w < 1 || h < 1) throw ContractError("Image: dimensions must be >= 1");
  }

  uint8_t& at(int x, int y, int ch) {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + ch];
  }
  uint8_t at(int x, int y, int ch) const {
    return pixels[(static_cast<size_t>(y) * width + x) * 3 + ch];
  }

  bool operator==(const Image& o) const {
    return width == o.width && height == o.height && pixels == o.pixels;
  }
};

// round-half-up into [0, 255]
uint8_t clamp_u8(double v);

// Binary P6 PPM, maxval 255. Header accepts arbitrary whitespace and
// '#' comment lines; encode is the bit-exact inverse of decode.
Image decode_ppm(const std::vector<uint8_t>& bytes);
std::vector<uint8_t> encode_ppm(const Image& img);

Image read_ppm_file(const std::string& path);
void write_ppm_file(const std::string& path, const Image& img);

// P5 PGM writer for heatmaps: values in [0,1] scaled by 255, round half up.
void write_pgm_file(const std::string& path, const Tensor4& heatmap);

// Bilinear resize with half-pixel centers; same-size resize is the identity.
Image resize_bilinear(const Image& img, int new_w, int new_h);

// [n,3,h,w] float tensor scaled to [0,1]; all images must share dimensions.
Tensor4 images_to_tensor(const std::vector<const Image*>& imgs);
Tensor4 image_to_tensor(const Image& img);

}  // namespace kexp
