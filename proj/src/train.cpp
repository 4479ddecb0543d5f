#include "kexp/train.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "kexp/checkpoint.hpp"

namespace fs = std::filesystem;

namespace kexp {

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(initial_lr > 0.0)) throw ConfigError("train: initial_lr must be > 0");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0))
    throw ConfigError("train: lr_decay must be in (0,1]");
  if (decay_period_epochs < 1)
    throw ConfigError("train: decay_period_epochs must be >= 1");
  if (!(momentum >= 0.0 && momentum < 1.0))
    throw ConfigError("train: momentum must be in [0,1)");
  if (workers < 1) throw ConfigError("train: workers must be >= 1");
  if (clip_norm < 0.0) throw ConfigError("train: clip_norm must be >= 0");
}

OptimizerState OptimizerState::for_params(
    const std::vector<ParamRef<float>>& params) {
  OptimizerState s;
  s.velocity.reserve(params.size());
  for (const auto& p : params)
    s.velocity.emplace_back(p.value->shape[0], p.value->shape[1],
                            p.value->shape[2], p.value->shape[3]);
  return s;
}

void sgd_step(const std::vector<ParamRef<float>>& params, OptimizerState& opt,
              double lr, double momentum, double clip_norm) {
  if (opt.velocity.size() != params.size())
    throw ContractError("sgd_step: velocity count does not match params");
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].grad->same_shape(*params[i].value) ||
        !opt.velocity[i].same_shape(*params[i].value))
      throw ContractError("sgd_step: shape mismatch on " + params[i].name);
    for (float g : params[i].grad->data)
      if (!std::isfinite(g))
        throw DivergenceError("non-finite gradient in " + params[i].name);
  }
  double scale = 1.0;
  if (clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto& p : params)
      for (float g : p.grad->data) sq += static_cast<double>(g) * g;
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) scale = clip_norm / norm;
  }
  for (size_t i = 0; i < params.size(); ++i) {
    float* v = opt.velocity[i].data.data();
    float* p = params[i].value->data.data();
    const float* g = params[i].grad->data.data();
    const size_t n = params[i].value->data.size();
    for (size_t k = 0; k < n; ++k) {
      v[k] = static_cast<float>(momentum * v[k] + scale * g[k]);
      p[k] -= static_cast<float>(lr) * v[k];
    }
  }
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ContractError("lr_at: epoch must be >= 0");
  const int steps = epoch / cfg.decay_period_epochs;
  return cfg.initial_lr * std::pow(cfg.lr_decay, steps);
}

std::string log_csv_header() {
  return "epoch,lr,train_loss,val_loss,train_acc,val_acc";
}

std::string log_csv_line(const EpochLog& log) {
  char buf[192];
  std::snprintf(buf, sizeof(buf), "%d,%.9g,%.6f,%.6f,%.6f,%.6f", log.epoch,
                log.lr, log.train_loss, log.val_loss, log.train_acc, log.val_acc);
  return buf;
}

EvalResult evaluate(ExpressionNet& net, const Dataset& ds, int batch_size) {
  if (ds.size() == 0) throw ContractError("evaluate: empty dataset");
  EvalResult res;
  double loss_sum = 0.0;
  int64_t correct = 0;
  const int64_t n = ds.size();
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t b = std::min<int64_t>(batch_size, n - start);
    std::vector<const Image*> imgs;
    std::vector<int> labels;
    imgs.reserve(static_cast<size_t>(b));
    for (int64_t i = start; i < start + b; ++i) {
      imgs.push_back(&ds.items[static_cast<size_t>(i)].image);
      labels.push_back(ds.items[static_cast<size_t>(i)].label);
    }
    const Tensor4 input = images_to_tensor(imgs);
    const Tensor4 logits = forward_logits(net, input, Mode::Eval);
    const LossResult<float> lr = softmax_xent(logits, labels);
    loss_sum += lr.loss * static_cast<double>(b);
    for (int64_t r = 0; r < b; ++r) {
      const int pred = logits.at2(r, 1) > logits.at2(r, 0) ? 1 : 0;
      res.cm.update(labels[static_cast<size_t>(r)], pred);
      if (pred == labels[static_cast<size_t>(r)]) ++correct;
    }
  }
  res.loss = loss_sum / static_cast<double>(n);
  res.accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return res;
}

TrainResult train_run(const RunConfig& cfg, const Dataset& train_ds,
                      const Dataset& val_ds, const std::string& out_dir,
                      const std::string& resume_path) {
  cfg.train.validate();
  cfg.model.validate();
  if (cfg.train.use_augment) cfg.augment.validate();
  if (train_ds.size() == 0) throw ConfigError("train_run: empty training set");

  TrainResult res;
  int start_epoch = 0;
  OptimizerState opt;
  if (!resume_path.empty()) {
    LoadedCheckpoint ck = load_checkpoint(resume_path);
    res.model = std::move(ck.model);
    opt = ck.has_opt ? std::move(ck.opt)
                     : OptimizerState::for_params(res.model.params());
    start_epoch = ck.epoch + 1;
  } else {
    res.model = build_model<float>(cfg.model);
    opt = OptimizerState::for_params(res.model.params());
  }
  auto params = res.model.params();

  std::ofstream log_file;
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const bool append = !resume_path.empty() && fs::exists(fs::path(out_dir) / "log.csv");
    log_file.open(fs::path(out_dir) / "log.csv",
                  append ? std::ios::app : std::ios::out);
    if (!log_file) throw IoError("cannot write log.csv in " + out_dir);
    if (!append) log_file << log_csv_header() << "\n";
  }

  res.best_epoch = -1;
  res.best_val_acc = -1.0;
  res.best_val_loss = 0.0;
  const AugmentConfig* aug = cfg.train.use_augment ? &cfg.augment : nullptr;

  for (int epoch = start_epoch; epoch < cfg.train.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg.train);
    double loss_sum = 0.0;
    int64_t correct = 0, seen = 0;
    for_each_batch(
        train_ds, cfg.train.batch_size, epoch, cfg.train.seed, aug,
        cfg.train.workers, [&](const Batch& batch) {
          res.model.zero_grads();
          const Tensor4 logits =
              forward_logits(res.model, batch.input, Mode::Train);
          const LossResult<float> l = softmax_xent(logits, batch.labels);
          res.model.backward(l.dlogits);
          sgd_step(params, opt, lr, cfg.train.momentum, cfg.train.clip_norm);
          const int64_t b = batch.input.n();
          loss_sum += l.loss * static_cast<double>(b);
          for (int64_t r = 0; r < b; ++r) {
            const int pred = logits.at2(r, 1) > logits.at2(r, 0) ? 1 : 0;
            if (pred == batch.labels[static_cast<size_t>(r)]) ++correct;
          }
          seen += b;
        });

    EpochLog entry;
    entry.epoch = epoch;
    entry.lr = lr;
    entry.train_loss = loss_sum / static_cast<double>(seen);
    entry.train_acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (val_ds.size() > 0) {
      const EvalResult ev = evaluate(res.model, val_ds, cfg.train.batch_size);
      entry.val_loss = ev.loss;
      entry.val_acc = ev.accuracy;
      const bool better =
          ev.accuracy > res.best_val_acc ||
          (ev.accuracy == res.best_val_acc && ev.loss < res.best_val_loss);
      if (better) {
        res.best_epoch = epoch;
        res.best_val_acc = ev.accuracy;
        res.best_val_loss = ev.loss;
        res.best_cm = ev.cm;
        if (!out_dir.empty())
          save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), res.model,
                          &opt, cfg, epoch);
      }
      res.final_cm = ev.cm;
    }
    res.log.push_back(entry);
    if (log_file) {
      log_file << log_csv_line(entry) << "\n";
      log_file.flush();
    }
    if (!out_dir.empty())
      save_checkpoint((fs::path(out_dir) / "final.ckpt").string(), res.model,
                      &opt, cfg, epoch);
  }
  return res;
}

TrainResult train_run(const RunConfig& cfg, const std::string& out_dir,
                      const std::string& resume_path) {
  const Dataset ds = load_dataset(cfg.data.root, cfg.data.image_size);
  auto [train_ds, val_ds] = stratified_split(ds, cfg.data.val_frac, cfg.data.seed);
  return train_run(cfg, train_ds, val_ds, out_dir, resume_path);
}

ExperimentMatrix run_experiments(const RunConfig& base, const Dataset& train_ds,
                                 const Dataset& val_ds,
                                 const std::string& out_dir) {
  ExperimentMatrix out;
  const auto specs = experiment_configs(base.model);
  for (size_t i = 0; i < specs.size(); ++i) {
    RunConfig cfg = base;
    cfg.model = specs[i].config;
    std::string exp_dir;
    if (!out_dir.empty())
      exp_dir = (fs::path(out_dir) / ("exp" + std::to_string(i + 1))).string();
    try {
      const TrainResult r = train_run(cfg, train_ds, val_ds, exp_dir);
      out.results.push_back(make_result(specs[i].name, r.best_cm));
    } catch (const Error& e) {
      ExperimentResult fail;
      fail.name = specs[i].name;
      fail.failed = true;
      fail.error = e.what();
      out.results.push_back(fail);
      std::cerr << specs[i].name << " failed: " << e.what() << "\n";
    }
  }
  out.report = report_table(out.results);
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    std::ofstream txt(fs::path(out_dir) / "report.txt");
    txt << out.report.text;
    std::ofstream csv(fs::path(out_dir) / "report.csv");
    csv << out.report.csv;
  }
  return out;
}

ExperimentMatrix run_experiments(const RunConfig& base, const std::string& out_dir) {
  const Dataset ds = load_dataset(base.data.root, base.data.image_size);
  auto [train_ds, val_ds] = stratified_split(ds, base.data.val_frac, base.data.seed);
  return run_experiments(base, train_ds, val_ds, out_dir);
}

}  // namespace kexp
