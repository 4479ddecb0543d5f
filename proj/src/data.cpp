#include "kexp/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "kexp/parallel.hpp"

namespace fs = std::filesystem;

namespace kexp {

void Dataset::recount() {
  class_counts = {0, 0};
  for (const auto& it : items) {
    if (it.label < 0 || it.label > 1)
      throw ContractError("dataset: label out of range");
    ++class_counts[static_cast<size_t>(it.label)];
  }
}

Dataset load_dataset(const std::string& root_dir, int target_size) {
  Dataset ds;
  for (int label = 0; label < 2; ++label) {
    const fs::path dir = fs::path(root_dir) / kClassNames[label];
    if (!fs::is_directory(dir))
      throw ConfigError("load_dataset: missing class directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".ppm")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty())
      throw ConfigError("load_dataset: no .ppm files in " + dir.string());
    for (const auto& f : files) {
      LabeledImage item;
      item.image = resize_bilinear(read_ppm_file(f.string()), target_size, target_size);
      item.label = label;
      item.source_path = f.string();
      ds.items.push_back(std::move(item));
    }
  }
  ds.recount();
  return ds;
}

std::pair<Dataset, Dataset> stratified_split(const Dataset& ds, double val_frac,
                                             uint64_t seed) {
  if (!(val_frac >= 0.0 && val_frac < 1.0))
    throw ConfigError("stratified_split: val_frac must be in [0,1)");
  Dataset train, val;
  for (int label = 0; label < 2; ++label) {
    std::vector<int64_t> idx;
    for (int64_t i = 0; i < ds.size(); ++i)
      if (ds.items[static_cast<size_t>(i)].label == label) idx.push_back(i);
    const int64_t count = static_cast<int64_t>(idx.size());
    const int64_t n_val =
        static_cast<int64_t>(std::ceil(val_frac * static_cast<double>(count)));
    if (val_frac > 0.0 && count < static_cast<int64_t>(std::ceil(1.0 / val_frac)))
      throw ConfigError(std::string("stratified_split: class '") +
                        kClassNames[label] + "' has only " +
                        std::to_string(count) + " items for val_frac " +
                        std::to_string(val_frac));
    // Fisher-Yates with a per-class substream.
    Rng rng = Rng::child(seed, static_cast<uint64_t>(label));
    for (int64_t i = count - 1; i > 0; --i) {
      const int64_t j = rng.uniform_int(0, i);
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
    }
    for (int64_t i = 0; i < count; ++i) {
      const LabeledImage& item = ds.items[static_cast<size_t>(idx[static_cast<size_t>(i)])];
      (i < n_val ? val : train).items.push_back(item);
    }
  }
  train.recount();
  val.recount();
  return {std::move(train), std::move(val)};
}

void for_each_batch(const Dataset& ds, int batch_size, int epoch, uint64_t seed,
                    const AugmentConfig* augment, int workers,
                    const std::function<void(const Batch&)>& fn) {
  if (batch_size < 1) throw ContractError("batch_iter: batch_size must be >= 1");
  if (ds.size() == 0) throw ContractError("batch_iter: empty dataset");
  const int64_t n = ds.size();
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  Rng shuffle_rng = Rng::child(seed, static_cast<uint64_t>(epoch));
  for (int64_t i = n - 1; i > 0; --i) {
    const int64_t j = shuffle_rng.uniform_int(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  const int s = ds.items[0].image.width;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t b = std::min<int64_t>(batch_size, n - start);
    Batch batch;
    batch.input = Tensor4(b, 3, s, s);
    batch.labels.resize(static_cast<size_t>(b));
    // Each sample is a pure function of (image, cfg, seed, index), so any
    // worker split yields bit-identical batches.
    parallel_for(b, [&](int64_t p0, int64_t p1) {
      for (int64_t p = p0; p < p1; ++p) {
        const int64_t pos = start + p;
        const LabeledImage& item =
            ds.items[static_cast<size_t>(order[static_cast<size_t>(pos)])];
        batch.labels[static_cast<size_t>(p)] = item.label;
        const Image* img = &item.image;
        Image augmented;
        if (augment) {
          const uint64_t index =
              static_cast<uint64_t>(epoch) * static_cast<uint64_t>(n) +
              static_cast<uint64_t>(pos);
          augmented = apply_pipeline(item.image, *augment, index);
          img = &augmented;
        }
        for (int ch = 0; ch < 3; ++ch) {
          float* plane = batch.input.data.data() + (p * 3 + ch) * s * s;
          for (int y = 0; y < s; ++y)
            for (int x = 0; x < s; ++x)
              plane[static_cast<int64_t>(y) * s + x] =
                  static_cast<float>(img->at(x, y, ch)) / 255.0f;
        }
      }
    }, std::max(1, workers), 1);
    fn(batch);
  }
}

std::vector<Batch> collect_batches(const Dataset& ds, int batch_size, int epoch,
                                   uint64_t seed, const AugmentConfig* augment,
                                   int workers) {
  std::vector<Batch> out;
  for_each_batch(ds, batch_size, epoch, seed, augment, workers,
                 [&out](const Batch& b) { out.push_back(b); });
  return out;
}

// ---- toy corpus ----------------------------------------------------------------

namespace {

void fill_disc(Image& img, double cx, double cy, double radius, uint8_t v) {
  const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x1 = std::min(img.width - 1, static_cast<int>(std::ceil(cx + radius)));
  const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y1 = std::min(img.height - 1, static_cast<int>(std::ceil(cy + radius)));
  const double r2 = radius * radius;
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r2)
        for (int ch = 0; ch < 3; ++ch) img.at(x, y, ch) = v;
    }
}

Image toy_sample(int label, int image_size, Rng& rng) {
  const int s = image_size;
  // Lightly tinted background with per-pixel noise.
  const int bg = static_cast<int>(rng.uniform_int(185, 230));
  int tint[3];
  for (int ch = 0; ch < 3; ++ch)
    tint[ch] = std::clamp(bg + static_cast<int>(rng.uniform_int(-10, 10)), 0, 255);
  Image img(s, s);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      for (int ch = 0; ch < 3; ++ch) {
        const int noise = static_cast<int>(rng.uniform_int(-8, 8));
        img.at(x, y, ch) = static_cast<uint8_t>(std::clamp(tint[ch] + noise, 0, 255));
      }
  const uint8_t ink = static_cast<uint8_t>(rng.uniform_int(30, 90));
  // Face anchor: randomized position and size.
  const double cx = s * rng.uniform(0.35, 0.65);
  const double cy = s * rng.uniform(0.35, 0.65);
  const double rad = s * rng.uniform(0.22, 0.38);
  const double stroke = std::max(1.5, rad * rng.uniform(0.18, 0.30));
  // Eyes.
  const double eye_r = std::max(1.5, rad * rng.uniform(0.14, 0.24));
  fill_disc(img, cx - 0.45 * rad, cy - 0.35 * rad, eye_r, ink);
  fill_disc(img, cx + 0.45 * rad, cy - 0.35 * rad, eye_r, ink);
  // Mouth arc: curvature sign is the class signal. u in [-1, 1]; happy bows
  // down in the middle (smile), sad bows up (frown).
  const double my = cy + 0.35 * rad;
  const double depth = rad * rng.uniform(0.25, 0.45);
  const double sign = label == kClassHappy ? 1.0 : -1.0;
  const int steps = 64;
  for (int t = 0; t <= steps; ++t) {
    const double u = -1.0 + 2.0 * t / steps;
    const double px = cx + 0.7 * rad * u;
    const double py = my + sign * depth * (1.0 - u * u);
    fill_disc(img, px, py, stroke * 0.5, ink);
  }
  return img;
}

}  // namespace

Dataset synth_toy(int n_per_class, int image_size, uint64_t seed) {
  if (n_per_class < 1) throw ContractError("synth_toy: n_per_class must be >= 1");
  if (image_size < 8) throw ContractError("synth_toy: image_size too small");
  Dataset ds;
  for (int label = 0; label < 2; ++label)
    for (int i = 0; i < n_per_class; ++i) {
      Rng rng = Rng::child(seed, static_cast<uint64_t>(label) * n_per_class +
                                     static_cast<uint64_t>(i));
      LabeledImage item;
      item.image = toy_sample(label, image_size, rng);
      item.label = label;
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%s/toy_%05d.ppm", kClassNames[label], i);
      item.source_path = buf;
      ds.items.push_back(std::move(item));
    }
  ds.recount();
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& root_dir) {
  const fs::path root(root_dir);
  std::error_code ec;
  fs::create_directories(root / kClassNames[0], ec);
  fs::create_directories(root / kClassNames[1], ec);
  std::array<int, 2> counter{0, 0};
  for (const auto& item : ds.items) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "img_%05d.ppm",
                  counter[static_cast<size_t>(item.label)]++);
    write_ppm_file((root / kClassNames[item.label] / buf).string(), item.image);
  }
}

Box glyph_bbox(const Image& img, uint8_t threshold) {
  Box b;
  b.x0 = img.width;
  b.y0 = img.height;
  b.x1 = -1;
  b.y1 = -1;
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x) {
      if (img.at(x, y, 0) < threshold && img.at(x, y, 1) < threshold &&
          img.at(x, y, 2) < threshold) {
        b.x0 = std::min(b.x0, x);
        b.y0 = std::min(b.y0, y);
        b.x1 = std::max(b.x1, x);
        b.y1 = std::max(b.y1, y);
      }
    }
  return b;
}

}  // namespace kexp
