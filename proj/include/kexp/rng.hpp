#pragma once

#include <array>
#include <cstdint>

namespace kexp {

// Seedable xoshiro256** generator. All draws are defined purely in terms of
// 64-bit integer arithmetic, so a given seed produces the same stream on
// every platform.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed);

  // Independent substream: a fresh generator seeded with
  // seed XOR golden_ratio_64 * (index + 1). Children with distinct indices
  // never depend on how much their siblings have consumed.
  static Rng child(uint64_t seed, uint64_t index);

  uint64_t next_u64();

  // Uniform in [0, 1), 53 random bits.
  double next_double();

  double uniform(double lo, double hi);

  // Uniform integer in [lo, hi], both ends inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  bool bernoulli(double p);

  // Standard normal via Box-Muller. Consumes exactly two raw draws per call
  // so the stream position is a pure function of the call count.
  double normal();
  double normal(double mean, double stddev);

  std::array<uint64_t, 4> state() const { return state_; }
  void set_state(const std::array<uint64_t, 4>& s) { state_ = s; }

 private:
  std::array<uint64_t, 4> state_;
};

constexpr uint64_t kGoldenRatio64 = 0x9E3779B97F4A7C15ull;

}  // namespace kexp
