#pragma once

#include <string>
#include <vector>

#include "kexp/data.hpp"
#include "kexp/metrics.hpp"
#include "kexp/model.hpp"

namespace kexp {

struct TrainConfig {
  int batch_size = 32;
  int epochs = 40;
  double initial_lr = 0.02;
  double lr_decay = 0.1;
  int decay_period_epochs = 15;
  double momentum = 0.9;
  int workers = 10;
  uint64_t seed = 0;
  double clip_norm = 0.0;     // 0 disables gradient clipping
  bool use_augment = false;   // online augmentation during training

  void validate() const;
};

struct DataConfig {
  std::string root;
  double val_frac = 0.2;
  uint64_t seed = 0;  // split seed
  int image_size = 224;
};

// Everything a run needs; serialized alongside results for provenance.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  DataConfig data;
};

// Per-parameter momentum buffers, aligned with net.params() order.
struct OptimizerState {
  std::vector<Tensor4> velocity;

  static OptimizerState for_params(const std::vector<ParamRef<float>>& params);
};

// Classical momentum: v <- mu*v + g; p <- p - lr*v.
// Non-finite gradients raise DivergenceError naming the parameter.
void sgd_step(const std::vector<ParamRef<float>>& params, OptimizerState& opt,
              double lr, double momentum, double clip_norm = 0.0);

// Step schedule: initial_lr * decay^floor(epoch / period).
double lr_at(int epoch, const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
};

std::string log_csv_header();
std::string log_csv_line(const EpochLog& log);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  ConfusionMatrix cm;
};

// Eval-mode pass over the dataset in storage order.
EvalResult evaluate(ExpressionNet& net, const Dataset& ds, int batch_size);

struct TrainResult {
  ExpressionNet model;  // final-epoch parameters
  std::vector<EpochLog> log;
  int best_epoch = -1;
  double best_val_acc = 0.0;
  double best_val_loss = 0.0;
  ConfusionMatrix best_cm;
  ConfusionMatrix final_cm;
};

// The full training loop. When out_dir is non-empty it receives log.csv,
// best.ckpt and final.ckpt; a non-empty resume_path continues an interrupted
// run on the exact same trajectory. Model selection: best validation
// accuracy, ties broken by lower validation loss.
TrainResult train_run(const RunConfig& cfg, const Dataset& train_ds,
                      const Dataset& val_ds, const std::string& out_dir = "",
                      const std::string& resume_path = "");

// Loads cfg.data.root, applies the stratified split, then trains.
TrainResult train_run(const RunConfig& cfg, const std::string& out_dir = "",
                      const std::string& resume_path = "");

struct ExperimentMatrix {
  std::vector<ExperimentResult> results;
  ReportTable report;
};

// Trains all eight experiment configurations on one shared split (split seed
// fixed before the loop) and renders the per-class metric report. Failures
// are recorded per experiment; the remaining runs continue.
ExperimentMatrix run_experiments(const RunConfig& base, const Dataset& train_ds,
                                 const Dataset& val_ds,
                                 const std::string& out_dir = "");
ExperimentMatrix run_experiments(const RunConfig& base,
                                 const std::string& out_dir = "");

}  // namespace kexp
