// Acceptance harness: each criterion prints exactly one PASS/FAIL line.
// Run with no arguments for the full gate, or pass criterion numbers.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "kexp/augment.hpp"
#include "kexp/checkpoint.hpp"
#include "kexp/gradcheck.hpp"
#include "kexp/train.hpp"

namespace fs = std::filesystem;
using namespace kexp;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

fs::path work_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("kexp_acceptance_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
}

// ---- 1: gradient oracle -----------------------------------------------------

bool criterion_gradients(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto reports = run_gradcheck_suite(20);
  const double elapsed = seconds_since(t0);
  double worst = 0.0;
  bool ok = true;
  for (const auto& r : reports) {
    worst = std::max(worst, r.max_rel_err);
    if (!r.pass) {
      ok = false;
      detail += " " + r.name + "=" + std::to_string(r.max_rel_err);
    }
  }
  std::ostringstream os;
  os << "20 seeds, worst rel err " << worst << ", " << elapsed << "s";
  detail = os.str() + detail;
  return ok && elapsed < 120.0;
}

// ---- 2: shape pipeline --------------------------------------------------------

bool criterion_shapes(std::string& detail) {
  const std::vector<std::array<int64_t, 4>> want = {
      {2, 5, 222, 222}, {2, 5, 111, 111}, {2, 11, 109, 109},
      {2, 11, 54, 54},  {2, 32076, 1, 1}, {2, 2, 1, 1}};
  for (const auto& spec : experiment_configs()) {
    auto net = build_model<float>(spec.config);
    Tensor4 v(2, 3, 224, 224, 0.25f);
    size_t next = 0;
    for (auto& layer : net.layers) {
      v = layer->forward(v, Mode::Eval);
      if (next < want.size() && v.shape == want[next]) ++next;
    }
    if (next != want.size()) {
      detail = spec.name + ": trace mismatch at stage " + std::to_string(next);
      return false;
    }
  }
  detail = "224x224x3 -> 222x222x5 -> 111x111x5 -> 109x109x11 -> 54x54x11 -> "
           "32076 -> 2, all 8 configs, exact";
  return true;
}

// ---- 3: metrics oracle ---------------------------------------------------------

bool criterion_metrics(std::string& detail) {
  Rng rng(0xACCE11);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = static_cast<int>(rng.uniform_int(1, 300));
    ConfusionMatrix cm;
    std::vector<int> actual(static_cast<size_t>(n)), predicted(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      actual[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(0, 1));
      predicted[static_cast<size_t>(i)] = static_cast<int>(rng.uniform_int(0, 1));
      cm.update(actual[static_cast<size_t>(i)], predicted[static_cast<size_t>(i)]);
    }
    for (int ref = 0; ref < 2; ++ref) {
      double tp = 0, tn = 0, fp = 0, fn = 0;
      for (int i = 0; i < n; ++i) {
        const bool a = actual[static_cast<size_t>(i)] == ref;
        const bool p = predicted[static_cast<size_t>(i)] == ref;
        if (a && p) ++tp;
        else if (!a && !p) ++tn;
        else if (p) ++fp;
        else ++fn;
      }
      const Summary s = summarize(cm, ref);
      const double acc = (tp + tn) / (tp + tn + fp + fn);
      const double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      const double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      const double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      if (s.accuracy != acc || s.precision != prec || s.recall != rec ||
          s.f1 != f1) {
        detail = "mismatch on trial " + std::to_string(trial);
        return false;
      }
    }
  }
  detail = "1000 random lists, streaming == list-scan, exact";
  return true;
}

// ---- 4: overfit capacity -------------------------------------------------------

bool criterion_overfit(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset subset = synth_toy(8, 32, 77);  // 16 samples, balanced
  std::ostringstream os;
  bool ok = true;
  const auto specs = experiment_configs();
  for (size_t i = 0; i < specs.size(); ++i) {
    RunConfig cfg;
    cfg.model = specs[i].config;
    cfg.model.input_size = 32;
    cfg.model.dense_widths = {16, 8};
    cfg.model.seed = 99;
    cfg.train.epochs = 200;
    cfg.train.batch_size = 16;
    cfg.train.initial_lr = 0.02;
    cfg.train.momentum = 0.9;
    cfg.train.lr_decay = 1.0;  // capacity check: constant learning rate
    cfg.train.workers = 1;
    cfg.train.seed = 99;
    const TrainResult r = train_run(cfg, subset, subset);
    int reached = -1;
    double best_loss = 1e9;
    for (const auto& log : r.log) {
      best_loss = std::min(best_loss, log.val_loss);
      if (log.val_acc == 1.0 && reached < 0) reached = log.epoch;
    }
    if (reached < 0 || best_loss >= 0.05) ok = false;
    os << " exp" << (i + 1);
    if (reached >= 0)
      os << "@" << reached;
    else
      os << "@never";
  }
  const double elapsed = seconds_since(t0);
  std::ostringstream head;
  head << "100% train acc (and loss<0.05) epochs:" << os.str() << ", "
       << elapsed << "s";
  detail = head.str();
  return ok && elapsed < 600.0;
}

// ---- 5: end-to-end toy benchmark ------------------------------------------------

bool criterion_end_to_end(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset full = synth_toy(600, 64, 7);
  auto [train_ds, val_ds] = stratified_split(full, 0.2, 7);
  if (train_ds.class_counts != std::array<int64_t, 2>{480, 480} ||
      val_ds.class_counts != std::array<int64_t, 2>{120, 120}) {
    detail = "split counts wrong";
    return false;
  }
  RunConfig base;
  base.model.input_size = 64;
  base.model.seed = 7;
  base.train = TrainConfig{};  // table-4 recipe: 32 / 40 / 0.02 / 0.1 / 0.9
  base.train.workers = 2;
  base.train.seed = 7;
  const fs::path out = work_dir("e2e");
  std::ostringstream os;
  bool ok = true;
  const auto specs = experiment_configs(base.model);
  for (size_t i = 0; i < specs.size(); ++i) {
    RunConfig cfg = base;
    cfg.model = specs[i].config;
    const TrainResult r = train_run(
        cfg, train_ds, val_ds, (out / ("exp" + std::to_string(i + 1))).string());
    const double target = (i == 6) ? 0.95 : 0.90;
    if (r.best_val_acc < target) ok = false;
    os << " exp" << (i + 1) << "=" << r.best_val_acc;
  }
  const double elapsed = seconds_since(t0);
  std::ostringstream head;
  head << "best val acc:" << os.str() << ", " << elapsed << "s";
  detail = head.str();
  return ok && elapsed < 3600.0;
}

// ---- 6: determinism --------------------------------------------------------------

bool criterion_determinism(std::string& detail) {
  const Dataset ds = synth_toy(32, 32, 55);
  auto [train_ds, val_ds] = stratified_split(ds, 0.25, 5);
  RunConfig cfg;
  cfg.model.input_size = 32;
  cfg.model.dense_widths = {16, 8};
  cfg.model.use_batchnorm = true;
  cfg.model.use_dropout = true;
  cfg.model.attention = AttentionKind::SE;
  cfg.model.seed = 3;
  cfg.train.epochs = 3;
  cfg.train.batch_size = 8;
  cfg.train.workers = 1;
  cfg.train.seed = 3;
  const fs::path a = work_dir("det_a"), b = work_dir("det_b");
  (void)train_run(cfg, train_ds, val_ds, a.string());
  (void)train_run(cfg, train_ds, val_ds, b.string());
  if (slurp(a / "log.csv") != slurp(b / "log.csv")) {
    detail = "single-worker reruns differ";
    return false;
  }
  AugmentConfig aug;
  aug.master_seed = 9;
  const auto w1 = collect_batches(train_ds, 8, 2, 5, &aug, 1);
  const auto w10 = collect_batches(train_ds, 8, 2, 5, &aug, 10);
  if (w1.size() != w10.size()) {
    detail = "batch counts differ across workers";
    return false;
  }
  for (size_t i = 0; i < w1.size(); ++i)
    if (w1[i].input.data != w10[i].input.data || w1[i].labels != w10[i].labels) {
      detail = "worker-count dependence in batch " + std::to_string(i);
      return false;
    }
  detail = "byte-identical log.csv; 1-worker == 10-worker augmented batches";
  return true;
}

// ---- 7: augmentation suite ---------------------------------------------------------

bool criterion_augmentation(std::string& detail) {
  // no-op identity
  Rng rng(77);
  Image img(64, 48);
  for (auto& p : img.pixels) p = static_cast<uint8_t>(rng.uniform_int(0, 255));
  AugmentConfig off;
  off.brightness_contrast_prob = off.jitter_prob = off.blur_prob = off.jpeg_prob =
      off.shadow_prob = off.affine_prob = off.pose_prob = off.hflip_prob =
          off.vflip_prob = off.saltpepper_prob = off.erase_prob = 0;
  if (!(apply_pipeline(img, off, 0) == img)) {
    detail = "no-op pipeline not identity";
    return false;
  }
  // flip involution
  if (!(hflip(hflip(img)) == img) || !(vflip(vflip(img)) == img)) {
    detail = "flip involution broken";
    return false;
  }
  // salt-and-pepper fraction on 1e5 pixels
  Image gray(400, 250, 128);
  Rng sp_rng(5);
  const Image noised = salt_pepper(gray, 0.05f, sp_rng);
  int64_t replaced = 0;
  for (size_t i = 0; i < noised.pixels.size(); i += 3)
    if (noised.pixels[i] != 128) ++replaced;
  const double frac = static_cast<double>(replaced) / 1e5;
  if (std::abs(frac - 0.05) > 0.005) {
    detail = "salt-pepper fraction " + std::to_string(frac);
    return false;
  }
  // jpeg quality 100 within +-1
  const Image jp = jpeg_degrade(img, 100);
  for (size_t i = 0; i < img.pixels.size(); ++i)
    if (std::abs(int(jp.pixels[i]) - int(img.pixels[i])) > 1) {
      detail = "jpeg q100 drifted more than 1 level";
      return false;
    }
  // shadow arithmetic
  Image bright(8, 8, 255);
  const std::array<std::array<double, 2>, 4> quad = {
      {{-0.5, -0.5}, {7.5, -0.5}, {7.5, 7.5}, {-0.5, 7.5}}};
  const Image shadowed = add_shadow(bright, 0.7f, quad);
  for (auto p : shadowed.pixels)
    if (p != 178 && p != 179) {
      detail = "shadow value " + std::to_string(int(p));
      return false;
    }
  std::ostringstream os;
  os << "identity, involution, S&P frac " << frac << ", jpeg +-1, shadow "
     << int(shadowed.pixels[0]);
  detail = os.str();
  return true;
}

// ---- 8: checkpoint trajectory equivalence --------------------------------------------

bool criterion_checkpoint(std::string& detail) {
  const Dataset ds = synth_toy(16, 32, 88);
  auto [train_ds, val_ds] = stratified_split(ds, 0.25, 8);
  RunConfig cfg;
  cfg.model.input_size = 32;
  cfg.model.dense_widths = {16, 8};
  cfg.model.use_batchnorm = true;
  cfg.model.use_dropout = true;
  cfg.model.attention = AttentionKind::SE;
  cfg.model.seed = 21;
  cfg.train.batch_size = 8;
  cfg.train.workers = 1;
  cfg.train.seed = 21;

  RunConfig full_cfg = cfg;
  full_cfg.train.epochs = 10;
  const fs::path full_dir = work_dir("ckpt_full");
  const TrainResult full = train_run(full_cfg, train_ds, val_ds, full_dir.string());

  RunConfig part_cfg = cfg;
  part_cfg.train.epochs = 5;
  const fs::path part_dir = work_dir("ckpt_part");
  (void)train_run(part_cfg, train_ds, val_ds, part_dir.string());

  RunConfig resume_cfg = cfg;
  resume_cfg.train.epochs = 10;
  const fs::path resume_dir = work_dir("ckpt_resume");
  const TrainResult resumed =
      train_run(resume_cfg, train_ds, val_ds, resume_dir.string(),
                (part_dir / "final.ckpt").string());

  if (resumed.log.empty() || resumed.log.back().epoch != 9) {
    detail = "resume did not reach epoch 10";
    return false;
  }
  const EpochLog& a = full.log.back();
  const EpochLog& b = resumed.log.back();
  if (std::memcmp(&a.train_loss, &b.train_loss, sizeof(double)) != 0 ||
      std::memcmp(&a.val_loss, &b.val_loss, sizeof(double)) != 0) {
    std::ostringstream os;
    os << "epoch-10 losses differ: " << a.train_loss << " vs " << b.train_loss;
    detail = os.str();
    return false;
  }
  std::ostringstream os;
  os << "epoch-10 train/val loss bit-equal (" << a.train_loss << ")";
  detail = os.str();
  return true;
}

// ---- 9: batch-norm statistical contract ------------------------------------------------

bool criterion_batchnorm(std::string& detail) {
  Rng rng(31);
  BatchNorm2d<double> bn(3);
  Tensor4d x(8, 3, 16, 16);
  for (auto& v : x.data) v = rng.uniform(-2.0, 5.0);
  const Tensor4d y = bn.forward(x, Mode::Train);  // gamma=1, beta=0: pre-affine
  const auto m = moments(y);
  double worst_mean = 0.0, worst_var = 0.0;
  for (size_t j = 0; j < 3; ++j) {
    worst_mean = std::max(worst_mean, std::abs(m.mean[j]));
    worst_var = std::max(worst_var, std::abs(m.var[j] - 1.0));
  }
  std::ostringstream os;
  os << "per-channel |mean| <= " << worst_mean << ", |var-1| <= " << worst_var;
  detail = os.str();
  return worst_mean <= 1e-5 && worst_var <= 1e-3;
}

// ---- 10: grad-cam ------------------------------------------------------------------------

bool criterion_gradcam(std::string& detail) {
  // shape/nonnegativity contract at the full 224 input size
  {
    ModelConfig cfg;
    cfg.use_batchnorm = true;
    cfg.use_dropout = true;
    cfg.attention = AttentionKind::SE;
    cfg.seed = 2;
    auto net = build_model<float>(cfg);
    Rng rng(3);
    Tensor4 img(1, 3, 224, 224);
    for (auto& v : img.data) v = static_cast<float>(rng.uniform(0, 1));
    const Tensor4 heat = grad_cam(net, img, 0);
    if (heat.h() != 224 || heat.w() != 224) {
      detail = "heatmap not 224x224";
      return false;
    }
    for (float v : heat.data)
      if (v < 0.f || v > 1.f) {
        detail = "heatmap out of [0,1]";
        return false;
      }
  }
  // localization on a toy-trained experiment-7 model
  const Dataset full = synth_toy(250, 64, 7);
  auto [train_ds, val_ds] = stratified_split(full, 0.2, 7);
  RunConfig cfg;
  cfg.model.input_size = 64;
  cfg.model.use_batchnorm = true;
  cfg.model.use_dropout = true;
  cfg.model.attention = AttentionKind::SE;
  cfg.model.seed = 7;
  cfg.train.epochs = 15;
  cfg.train.workers = 2;
  cfg.train.seed = 7;
  const fs::path out = work_dir("gradcam");
  (void)train_run(cfg, train_ds, val_ds, out.string());
  LoadedCheckpoint best = load_checkpoint((out / "best.ckpt").string());

  int hits = 0;
  const int samples = 100;
  for (int i = 0; i < samples; ++i) {
    const LabeledImage& item = val_ds.items[static_cast<size_t>(i)];
    const Box box = glyph_bbox(item.image);
    const Tensor4 input = image_to_tensor(item.image);
    const Tensor4 heat = grad_cam(best.model, input, item.label);
    int64_t arg = 0;
    for (int64_t q = 1; q < heat.numel(); ++q)
      if (heat.data[static_cast<size_t>(q)] > heat.data[static_cast<size_t>(arg)])
        arg = q;
    const int ax = static_cast<int>(arg % 64), ay = static_cast<int>(arg / 64);
    if (box.contains(ax, ay)) ++hits;
  }
  std::ostringstream os;
  os << "heatmap argmax in glyph bbox for " << hits << "/" << samples
     << " validation samples";
  detail = os.str();
  return hits >= 70;
}

struct Criterion {
  int id;
  const char* name;
  std::function<bool(std::string&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "gradient oracle (all layers + tiny models, 64-bit FD)", criterion_gradients},
      {2, "shape pipeline matches the architecture exactly", criterion_shapes},
      {3, "streaming metrics equal list-scan definitions", criterion_metrics},
      {4, "overfit capacity: 8 configs reach 100% on 16 samples", criterion_overfit},
      {5, "end-to-end toy benchmark at the full training recipe", criterion_end_to_end},
      {6, "determinism: reruns and worker counts", criterion_determinism},
      {7, "augmentation suite contracts", criterion_augmentation},
      {8, "checkpoint resume reproduces the trajectory", criterion_checkpoint},
      {9, "batch-norm train-mode statistical contract", criterion_batchnorm},
      {10, "grad-cam shape, range and toy localization", criterion_gradcam},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() &&
        std::find(selected.begin(), selected.end(), c.id) == selected.end())
      continue;
    std::string detail;
    bool ok = false;
    try {
      ok = c.run(detail);
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("%s criterion %d: %s [%s]\n", ok ? "PASS" : "FAIL", c.id, c.name,
                detail.c_str());
    std::fflush(stdout);
    if (!ok) ++failures;
  }
  return failures;
}
