#include "kexp/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "kexp/checkpoint.hpp"
#include "kexp/config_json.hpp"
#include "kexp/gradcheck.hpp"
#include "kexp/train.hpp"

namespace fs = std::filesystem;

namespace kexp {
namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitDivergence = 3;
constexpr int kExitGradcheck = 4;

void write_resolved_config(const RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  std::ofstream f(fs::path(out_dir) / "config.json");
  if (!f) throw IoError("cannot write config.json in " + out_dir);
  f << to_json(cfg).dump(2) << "\n";
}

nlohmann::json summary_json(const Summary& s) {
  return {{"precision", s.precision},
          {"recall", s.recall},
          {"f1", s.f1},
          {"zero_division", s.zero_division}};
}

struct CommonTrainFlags {
  std::string config_path;
  std::string data_dir;
  std::string out_dir;

  void wire_config(CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run config file");
  }
};

// flags > file > defaults
RunConfig resolve_config(const std::string& config_path) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_run_config_file(config_path);
  return cfg;
}

int cmd_train(const CommonTrainFlags& common, const RunConfig& cfg,
              const std::string& resume) {
  write_resolved_config(cfg, common.out_dir);
  const TrainResult res = train_run(cfg, common.out_dir, resume);
  std::printf("trained %d epochs; best val acc %.4f (epoch %d); final val acc %.4f\n",
              cfg.train.epochs, res.best_val_acc, res.best_epoch,
              res.log.empty() ? 0.0 : res.log.back().val_acc);
  std::printf("artifacts in %s: config.json log.csv best.ckpt final.ckpt\n",
              common.out_dir.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_dir,
             bool use_val_split, int batch_size) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  Dataset ds = load_dataset(data_dir, ck.config.model.input_size);
  if (use_val_split) {
    auto split = stratified_split(ds, ck.config.data.val_frac, ck.config.data.seed);
    ds = std::move(split.second);
  }
  const EvalResult ev = evaluate(ck.model, ds, batch_size);
  nlohmann::json out = {
      {"checkpoint", ckpt_path},
      {"epoch", ck.epoch},
      {"count", ds.size()},
      {"loss", ev.loss},
      {"accuracy", ev.accuracy},
      {"happy", summary_json(summarize(ev.cm, kClassHappy))},
      {"sad", summary_json(summarize(ev.cm, kClassSad))},
      {"confusion", ev.cm.counts},
  };
  std::cout << out.dump(2) << "\n";
  return kExitOk;
}

int cmd_experiments(const CommonTrainFlags& common, const RunConfig& cfg) {
  write_resolved_config(cfg, common.out_dir);
  const ExperimentMatrix m = run_experiments(cfg, common.out_dir);
  std::cout << m.report.text;
  std::printf("report written to %s/report.txt and report.csv\n",
              common.out_dir.c_str());
  for (const auto& r : m.results)
    if (r.failed) return kExitDivergence;
  return kExitOk;
}

int cmd_augment(const std::string& in_dir, const std::string& out_dir,
                const RunConfig& cfg, int per_image) {
  // Keep source resolution: no resize on the augmentation path.
  Dataset ds;
  for (int label = 0; label < 2; ++label) {
    const fs::path dir = fs::path(in_dir) / kClassNames[label];
    if (!fs::is_directory(dir))
      throw ConfigError("augment: missing class directory " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".ppm")
        files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      LabeledImage item;
      item.image = read_ppm_file(f.string());
      item.label = label;
      item.source_path = f.string();
      ds.items.push_back(std::move(item));
    }
  }
  ds.recount();
  fs::create_directories(fs::path(out_dir) / kClassNames[0]);
  fs::create_directories(fs::path(out_dir) / kClassNames[1]);
  std::ofstream manifest(fs::path(out_dir) / "manifest.csv");
  if (!manifest) throw IoError("cannot write manifest.csv in " + out_dir);
  manifest << "source,output,seed,index,applied_ops\n";
  uint64_t index = 0;
  for (const auto& item : ds.items) {
    const std::string stem = fs::path(item.source_path).stem().string();
    for (int n = 0; n < per_image; ++n, ++index) {
      std::vector<std::string> ops;
      const Image out_img = apply_pipeline(item.image, cfg.augment, index, &ops);
      const fs::path out_path = fs::path(out_dir) / kClassNames[item.label] /
                                (stem + "_aug" + std::to_string(n) + ".ppm");
      write_ppm_file(out_path.string(), out_img);
      std::string joined;
      for (size_t i = 0; i < ops.size(); ++i)
        joined += (i ? "|" : "") + ops[i];
      manifest << item.source_path << "," << out_path.string() << ","
               << cfg.augment.master_seed << "," << index << "," << joined
               << "\n";
    }
  }
  std::printf("wrote %llu augmented images to %s\n",
              static_cast<unsigned long long>(index), out_dir.c_str());
  return kExitOk;
}

int cmd_synth_toy(const std::string& out_dir, int n, int size, uint64_t seed) {
  const Dataset ds = synth_toy(n, size, seed);
  write_dataset(ds, out_dir);
  std::ofstream manifest(fs::path(out_dir) / "manifest.csv");
  if (!manifest) throw IoError("cannot write manifest.csv in " + out_dir);
  manifest << "path,label,seed,index\n";
  std::array<int, 2> counter{0, 0};
  for (int64_t i = 0; i < ds.size(); ++i) {
    const auto& item = ds.items[static_cast<size_t>(i)];
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s/img_%05d.ppm", kClassNames[item.label],
                  counter[static_cast<size_t>(item.label)]++);
    manifest << buf << "," << kClassNames[item.label] << "," << seed << "," << i
             << "\n";
  }
  std::printf("wrote %lld toy images (%d per class, %dx%d) to %s\n",
              static_cast<long long>(ds.size()), n, size, size, out_dir.c_str());
  return kExitOk;
}

int cmd_gradcheck(int seeds) {
  const auto reports = run_gradcheck_suite(seeds);
  for (const auto& r : reports)
    std::printf("%-20s max rel err %.3e (tol %.0e)  %s\n", r.name.c_str(),
                r.max_rel_err, r.tolerance, r.pass ? "PASS" : "FAIL");
  return all_passed(reports) ? kExitOk : kExitGradcheck;
}

int cmd_gradcam(const std::string& ckpt_path, const std::string& out_dir,
                const std::string& target, const std::vector<std::string>& images) {
  LoadedCheckpoint ck = load_checkpoint(ckpt_path);
  fs::create_directories(out_dir);
  for (const auto& path : images) {
    const Image img = resize_bilinear(read_ppm_file(path),
                                      ck.config.model.input_size,
                                      ck.config.model.input_size);
    const Tensor4 input = image_to_tensor(img);
    int cls;
    if (target == "happy") {
      cls = kClassHappy;
    } else if (target == "sad") {
      cls = kClassSad;
    } else {
      cls = predict(ck.model, input)[0];
    }
    const Tensor4 heat = grad_cam(ck.model, input, cls);
    const fs::path out_path =
        fs::path(out_dir) / (fs::path(path).stem().string() + "_cam.pgm");
    write_pgm_file(out_path.string(), heat);
    std::printf("%s -> %s (class %s)\n", path.c_str(), out_path.string().c_str(),
                kClassNames[cls]);
  }
  return kExitOk;
}

}  // namespace

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"kidexpr: a small CNN for two-class facial-expression images"};
  app.require_subcommand(1);

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "Train one model configuration");
  CommonTrainFlags train_flags;
  train_flags.wire_config(train_cmd);
  train_cmd->add_option("--data", train_flags.data_dir, "Corpus root (happy/ sad/)");
  train_cmd->add_option("--out", train_flags.out_dir, "Output directory")->required();
  std::string resume;
  train_cmd->add_option("--resume", resume, "Checkpoint to resume from");
  uint64_t f_seed = 0;
  int f_epochs = 0, f_batch = 0, f_workers = 0, f_size = 0;
  double f_lr = 0.0;
  std::string f_attention;
  bool f_batchnorm = false, f_dropout = false, f_augment = false;
  auto* o_seed = train_cmd->add_option("--seed", f_seed, "Master seed (model+train+split)");
  auto* o_epochs = train_cmd->add_option("--epochs", f_epochs, "Training epochs");
  auto* o_batch = train_cmd->add_option("--batch-size", f_batch, "Batch size");
  auto* o_workers = train_cmd->add_option("--workers", f_workers, "Data loader workers");
  auto* o_size = train_cmd->add_option("--size", f_size, "Input image size");
  auto* o_lr = train_cmd->add_option("--lr", f_lr, "Initial learning rate");
  auto* o_att = train_cmd->add_option("--attention", f_attention, "none|se|cbam");
  auto* o_bn = train_cmd->add_flag("--batchnorm", f_batchnorm, "Enable batch norm");
  auto* o_do = train_cmd->add_flag("--dropout", f_dropout, "Enable dropout");
  auto* o_aug = train_cmd->add_flag("--augment", f_augment, "Online augmentation");

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint, print JSON metrics");
  std::string eval_ckpt, eval_data;
  bool eval_val_split = false;
  int eval_batch = 32;
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "Corpus root")->required();
  eval_cmd->add_flag("--use-val-split", eval_val_split,
                     "Evaluate only the checkpoint's validation split");
  eval_cmd->add_option("--batch-size", eval_batch, "Eval batch size");

  // ---- experiments ----
  auto* exp_cmd = app.add_subcommand("experiments", "Run the 8-experiment matrix");
  CommonTrainFlags exp_flags;
  exp_flags.wire_config(exp_cmd);
  exp_cmd->add_option("--data", exp_flags.data_dir, "Corpus root");
  exp_cmd->add_option("--out", exp_flags.out_dir, "Output directory")->required();
  uint64_t e_seed = 0;
  int e_epochs = 0, e_size = 0;
  auto* eo_seed = exp_cmd->add_option("--seed", e_seed, "Master seed");
  auto* eo_epochs = exp_cmd->add_option("--epochs", e_epochs, "Training epochs");
  auto* eo_size = exp_cmd->add_option("--size", e_size, "Input image size");

  // ---- augment ----
  auto* aug_cmd = app.add_subcommand("augment", "Write augmented copies of a corpus");
  std::string aug_in, aug_out, aug_config;
  int per_image = 1;
  uint64_t aug_seed = 0;
  aug_cmd->add_option("--in", aug_in, "Input corpus root")->required();
  aug_cmd->add_option("--out", aug_out, "Output corpus root")->required();
  aug_cmd->add_option("--config", aug_config, "JSON run config file");
  aug_cmd->add_option("--per-image", per_image, "Augmented copies per image");
  auto* ao_seed = aug_cmd->add_option("--seed", aug_seed, "Augmentation master seed");

  // ---- synth-toy ----
  auto* toy_cmd = app.add_subcommand("synth-toy", "Generate the procedural toy corpus");
  std::string toy_out;
  int toy_n = 600, toy_size = 224;
  uint64_t toy_seed = 7;
  toy_cmd->add_option("--out", toy_out, "Output corpus root")->required();
  toy_cmd->add_option("--n", toy_n, "Images per class");
  toy_cmd->add_option("--size", toy_size, "Image size");
  toy_cmd->add_option("--seed", toy_seed, "Generator seed");

  // ---- gradcheck ----
  auto* gc_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  int gc_seeds = 5;
  gc_cmd->add_option("--seeds", gc_seeds, "Random seeds per check");

  // ---- gradcam ----
  auto* cam_cmd = app.add_subcommand("gradcam", "Write P5 PGM heatmaps for images");
  std::string cam_ckpt, cam_out, cam_class = "pred";
  std::vector<std::string> cam_images;
  cam_cmd->add_option("--ckpt", cam_ckpt, "Checkpoint file")->required();
  cam_cmd->add_option("--out", cam_out, "Output directory")->required();
  cam_cmd->add_option("--class", cam_class, "happy|sad|pred (default pred)");
  cam_cmd->add_option("images", cam_images, "Input PPM images")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      RunConfig cfg = resolve_config(train_flags.config_path);
      if (!train_flags.data_dir.empty()) cfg.data.root = train_flags.data_dir;
      if (*o_seed) {
        cfg.model.seed = f_seed;
        cfg.train.seed = f_seed;
        cfg.data.seed = f_seed;
        cfg.augment.master_seed = f_seed;
      }
      if (*o_epochs) cfg.train.epochs = f_epochs;
      if (*o_batch) cfg.train.batch_size = f_batch;
      if (*o_workers) cfg.train.workers = f_workers;
      if (*o_size) {
        cfg.model.input_size = f_size;
        cfg.data.image_size = f_size;
      }
      if (*o_lr) cfg.train.initial_lr = f_lr;
      if (*o_att) cfg.model.attention = attention_from_string(f_attention);
      if (*o_bn) cfg.model.use_batchnorm = true;
      if (*o_do) cfg.model.use_dropout = true;
      if (*o_aug) cfg.train.use_augment = true;
      if (cfg.data.root.empty())
        throw ConfigError("train: no data directory (--data or config data.root)");
      return cmd_train(train_flags, cfg, resume);
    }
    if (eval_cmd->parsed())
      return cmd_eval(eval_ckpt, eval_data, eval_val_split, eval_batch);
    if (exp_cmd->parsed()) {
      RunConfig cfg = resolve_config(exp_flags.config_path);
      if (!exp_flags.data_dir.empty()) cfg.data.root = exp_flags.data_dir;
      if (*eo_seed) {
        cfg.model.seed = e_seed;
        cfg.train.seed = e_seed;
        cfg.data.seed = e_seed;
        cfg.augment.master_seed = e_seed;
      }
      if (*eo_epochs) cfg.train.epochs = e_epochs;
      if (*eo_size) {
        cfg.model.input_size = e_size;
        cfg.data.image_size = e_size;
      }
      if (cfg.data.root.empty())
        throw ConfigError("experiments: no data directory (--data or config data.root)");
      return cmd_experiments(exp_flags, cfg);
    }
    if (aug_cmd->parsed()) {
      RunConfig cfg = resolve_config(aug_config);
      if (*ao_seed) cfg.augment.master_seed = aug_seed;
      return cmd_augment(aug_in, aug_out, cfg, per_image);
    }
    if (toy_cmd->parsed()) return cmd_synth_toy(toy_out, toy_n, toy_size, toy_seed);
    if (gc_cmd->parsed()) return cmd_gradcheck(gc_seeds);
    if (cam_cmd->parsed())
      return cmd_gradcam(cam_ckpt, cam_out, cam_class, cam_images);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}

}  // namespace kexp
