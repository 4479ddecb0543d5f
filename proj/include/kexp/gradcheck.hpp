#pragma once

#include <string>
#include <vector>

namespace kexp {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite-difference checks (64-bit, step 1e-5) for every layer kind
// and two full tiny models, repeated over the given number of random seeds.
// Inputs within 1e-3 of a ReLU/pooling nondifferentiability are resampled.
std::vector<GradCheckReport> run_gradcheck_suite(int num_seeds);

bool all_passed(const std::vector<GradCheckReport>& reports);

}  // namespace kexp
