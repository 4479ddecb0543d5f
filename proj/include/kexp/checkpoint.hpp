#pragma once

#include <optional>
#include <string>

#include "kexp/train.hpp"

namespace kexp {

// Checkpoint file layout:
//   "KEXP" | u32 version (LE) | u32 header length (LE) | UTF-8 JSON header |
//   raw little-endian float32 blobs in manifest order.
// The header carries the run config, the epoch, every stochastic layer's
// generator state and the tensor manifest (name, shape, byte offset).
inline constexpr uint32_t kCheckpointVersion = 1;

void save_checkpoint(const std::string& path, ExpressionNet& net,
                     const OptimizerState* opt, const RunConfig& cfg, int epoch);

struct LoadedCheckpoint {
  ExpressionNet model;
  OptimizerState opt;
  bool has_opt = false;
  RunConfig config;
  int epoch = -1;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace kexp
