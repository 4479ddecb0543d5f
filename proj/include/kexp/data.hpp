#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kexp/augment.hpp"
#include "kexp/image.hpp"
#include "kexp/model.hpp"

namespace kexp {

struct LabeledImage {
  Image image;
  int label = 0;  // 0 = happy, 1 = sad
  std::string source_path;
};

struct Dataset {
  std::vector<LabeledImage> items;
  std::array<int64_t, 2> class_counts{0, 0};

  int64_t size() const { return static_cast<int64_t>(items.size()); }
  void recount();
};

// Loads root/happy/*.ppm and root/sad/*.ppm, sorted by (class, filename),
// every image resized to target_size x target_size.
Dataset load_dataset(const std::string& root_dir, int target_size = 224);

// Per class: seeded shuffle, first ceil(val_frac * count) items go to
// validation. No item lands in both splits.
std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double val_frac,
                                             uint64_t seed);

struct Batch {
  Tensor4 input;            // [b, 3, s, s], values in [0,1]
  std::vector<int> labels;  // class indices
};

// Epoch-seeded shuffled batches; the final partial batch is emitted as-is.
// With an augment config, apply_pipeline runs per sample with
// index = epoch * |ds| + position (position in the shuffled order), so the
// result is independent of worker count.
void for_each_batch(const Dataset& ds, int batch_size, int epoch, uint64_t seed,
                    const AugmentConfig* augment, int workers,
                    const std::function<void(const Batch&)>& fn);

std::vector<Batch> collect_batches(const Dataset& ds, int batch_size, int epoch,
                                   uint64_t seed, const AugmentConfig* augment,
                                   int workers);

// Procedurally generated two-class glyph corpus: arc-up ("happy") vs
// arc-down ("sad") on a light noisy background, position/size/contrast
// randomized per sample. Deterministic under seed.
Dataset synth_toy(int n_per_class, int image_size, uint64_t seed);

// Writes ds as root/happy/*.ppm + root/sad/*.ppm (the load_dataset layout).
void write_dataset(const Dataset& ds, const std::string& root_dir);

// Tight bounding box of glyph pixels (darker than the threshold on every
// channel); used by localization checks on the toy corpus.
struct Box {
  int x0 = 0, y0 = 0, x1 = -1, y1 = -1;  // inclusive; empty if x1 < x0
  bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};
Box glyph_bbox(const Image& img, uint8_t threshold = 140);

}  // namespace kexp
