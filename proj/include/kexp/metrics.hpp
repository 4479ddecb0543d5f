#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace kexp {

// counts[actual][predicted] for the two classes.
struct ConfusionMatrix {
  std::array<std::array<int64_t, 2>, 2> counts{{{0, 0}, {0, 0}}};

  void update(int actual, int predicted);
  int64_t total() const;
  ConfusionMatrix transposed() const;
};

ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b);

struct Summary {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool zero_division = false;  // some denominator was empty; value forced to 0
};

// Accuracy, precision, recall and F1 with the given class as "positive".
// Empty denominators yield 0 with the zero_division flag set.
Summary summarize(const ConfusionMatrix& cm, int reference_class);

struct ExperimentResult {
  std::string name;
  Summary happy;  // reference class 0
  Summary sad;    // reference class 1
  double accuracy = 0.0;
  bool failed = false;
  std::string error;
};

ExperimentResult make_result(const std::string& name, const ConfusionMatrix& cm);

struct ReportTable {
  std::string text;  // aligned table, 2-decimal values
  std::string csv;   // experiment,happy_precision,...,accuracy
};

ReportTable report_table(const std::vector<ExperimentResult>& results);

}  // namespace kexp
