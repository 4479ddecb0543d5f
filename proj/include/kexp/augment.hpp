#pragma once

#include <array>
#include <string>
#include <vector>

#include "kexp/image.hpp"
#include "kexp/rng.hpp"

namespace kexp {

// Every probability/magnitude of the augmentation pipeline. Values the source
// recipe pins are defaults here; under-specified stage probabilities default
// to 0.5 and are recorded in run configs.
struct AugmentConfig {
  // appearance
  float brightness_contrast_prob = 0.5f;
  float contrast_lo = 0.8f, contrast_hi = 1.2f;
  float brightness_shift = 25.5f;  // additive, +- this many levels
  float jitter_prob = 0.5f;
  float hue_delta = 0.05f;   // fraction of the hue circle, +-
  float sat_delta = 0.2f;    // multiplicative, +-
  float bright_delta = 0.2f; // multiplicative, +-
  float blur_prob = 0.2f;
  std::array<int, 3> blur_kernel_choices{5, 7, 9};
  float jpeg_prob = 0.5f;
  int jpeg_quality = 30;
  float shadow_prob = 0.5f;
  float shadow_factor = 0.7f;
  // geometric / pose
  float affine_prob = 0.5f;
  float rotation_max_deg = 30.0f;
  float translate_frac = 0.1f;
  float scale_lo = 0.8f, scale_hi = 1.2f;
  float pose_prob = 0.5f;
  float pose_max_frac = 0.05f;  // perspective corner displacement, of extent
  float hflip_prob = 0.5f;
  float vflip_prob = 0.1f;
  // occlusion / noise
  float saltpepper_prob = 0.5f;
  float saltpepper_density = 0.05f;
  float erase_prob = 0.2f;
  float erase_area_lo = 0.02f, erase_area_hi = 0.2f;
  float erase_aspect_lo = 0.3f, erase_aspect_hi = 3.3f;

  uint64_t master_seed = 0;

  void validate() const;
};

// ---- primitives (deterministic given their arguments) ----------------------

Image brightness_contrast(const Image& img, float contrast, float brightness);
Image color_jitter(const Image& img, float hue_shift, float sat_factor,
                   float val_factor);
Image gaussian_blur(const Image& img, int kernel);
// Darkens pixels inside the quadrilateral by the given factor.
Image add_shadow(const Image& img, float factor,
                 const std::array<std::array<double, 2>, 4>& quad);
// Simulates JPEG quality loss: blockwise DCT, quantization by the IJG-scaled
// standard luminance table, inverse DCT. No entropy coding.
Image jpeg_degrade(const Image& img, int quality);
// Rotation (degrees) about the center, pixel translation, uniform scale;
// bilinear resampling with black fill outside.
Image warp_affine(const Image& img, double angle_deg, double tx, double ty,
                  double scale);
// Maps unit corners to displaced source corners (fractions of the extent).
Image warp_perspective(const Image& img,
                       const std::array<std::array<double, 2>, 4>& corner_disp);
Image hflip(const Image& img);
Image vflip(const Image& img);
Image salt_pepper(const Image& img, float density, Rng& rng);

struct EraseRect {
  int x0 = 0, y0 = 0, w = 0, h = 0;
};
EraseRect sample_erase_rect(int img_w, int img_h, const AugmentConfig& cfg,
                            Rng& rng);
Image erase_rect(const Image& img, const EraseRect& r, Rng& rng);

// Samples the shadow quadrilateral: two points on a random edge plus two
// interior points.
std::array<std::array<double, 2>, 4> sample_shadow_quad(int w, int h, Rng& rng);

// ---- stages -----------------------------------------------------------------

Image appearance_stage(const Image& img, const AugmentConfig& cfg, Rng& rng,
                       std::vector<std::string>* applied = nullptr);
Image geometric_stage(const Image& img, const AugmentConfig& cfg, Rng& rng,
                      std::vector<std::string>* applied = nullptr);
Image occlusion_stage(const Image& img, const AugmentConfig& cfg, Rng& rng,
                      std::vector<std::string>* applied = nullptr);

// appearance -> geometric -> occlusion under substream(master_seed, index).
// Output depends only on (img, cfg, master_seed, sample_index).
Image apply_pipeline(const Image& img, const AugmentConfig& cfg,
                     uint64_t sample_index,
                     std::vector<std::string>* applied = nullptr);

}  // namespace kexp
