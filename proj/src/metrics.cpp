#include "kexp/metrics.hpp"

#include <cstdio>

#include "kexp/errors.hpp"

namespace kexp {

void ConfusionMatrix::update(int actual, int predicted) {
  if (actual < 0 || actual > 1 || predicted < 0 || predicted > 1)
    throw ContractError("confusion: class out of range, actual=" +
                        std::to_string(actual) + " predicted=" +
                        std::to_string(predicted));
  ++counts[static_cast<size_t>(actual)][static_cast<size_t>(predicted)];
}

int64_t ConfusionMatrix::total() const {
  return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
}

ConfusionMatrix ConfusionMatrix::transposed() const {
  ConfusionMatrix t;
  for (int a = 0; a < 2; ++a)
    for (int p = 0; p < 2; ++p)
      t.counts[static_cast<size_t>(a)][static_cast<size_t>(p)] =
          counts[static_cast<size_t>(p)][static_cast<size_t>(a)];
  return t;
}

ConfusionMatrix merge(const ConfusionMatrix& a, const ConfusionMatrix& b) {
  ConfusionMatrix m = a;
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      m.counts[static_cast<size_t>(i)][static_cast<size_t>(j)] +=
          b.counts[static_cast<size_t>(i)][static_cast<size_t>(j)];
  return m;
}

Summary summarize(const ConfusionMatrix& cm, int reference_class) {
  if (reference_class < 0 || reference_class > 1)
    throw ContractError("summarize: reference class out of range");
  if (cm.total() < 1) throw ContractError("summarize: empty confusion matrix");
  const size_t r = static_cast<size_t>(reference_class);
  const size_t o = 1 - r;
  const double tp = static_cast<double>(cm.counts[r][r]);
  const double fn = static_cast<double>(cm.counts[r][o]);
  const double fp = static_cast<double>(cm.counts[o][r]);
  const double tn = static_cast<double>(cm.counts[o][o]);
  Summary s;
  s.accuracy = (tp + tn) / (tp + tn + fp + fn);
  if (tp + fp > 0.0) {
    s.precision = tp / (tp + fp);
  } else {
    s.zero_division = true;
  }
  if (tp + fn > 0.0) {
    s.recall = tp / (tp + fn);
  } else {
    s.zero_division = true;
  }
  if (s.precision + s.recall > 0.0) {
    s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  } else {
    s.zero_division = true;
  }
  return s;
}

ExperimentResult make_result(const std::string& name, const ConfusionMatrix& cm) {
  ExperimentResult r;
  r.name = name;
  r.happy = summarize(cm, 0);
  r.sad = summarize(cm, 1);
  r.accuracy = r.happy.accuracy;
  return r;
}

ReportTable report_table(const std::vector<ExperimentResult>& results) {
  if (results.empty()) throw ContractError("report_table: no results");
  size_t name_w = 10;
  for (const auto& r : results) name_w = std::max(name_w, r.name.size());

  std::string text;
  char line[512];
  std::snprintf(line, sizeof(line),
                "%-*s | %-18s | %-18s | %s\n", static_cast<int>(name_w), "Model",
                "Happy  P / R / F1", "Sad    P / R / F1", "Accuracy");
  text += line;
  text += std::string(name_w + 54, '-') + "\n";

  std::string csv =
      "experiment,happy_precision,happy_recall,happy_f1,"
      "sad_precision,sad_recall,sad_f1,accuracy\n";

  for (const auto& r : results) {
    if (r.failed) {
      std::snprintf(line, sizeof(line), "%-*s | FAILED: %s\n",
                    static_cast<int>(name_w), r.name.c_str(), r.error.c_str());
      text += line;
      continue;
    }
    std::snprintf(line, sizeof(line),
                  "%-*s | %.2f / %.2f / %.2f | %.2f / %.2f / %.2f | %.2f\n",
                  static_cast<int>(name_w), r.name.c_str(), r.happy.precision,
                  r.happy.recall, r.happy.f1, r.sad.precision, r.sad.recall,
                  r.sad.f1, r.accuracy);
    text += line;
    std::string quoted = r.name;
    // commas inside experiment names get CSV quoting
    if (quoted.find(',') != std::string::npos) quoted = "\"" + quoted + "\"";
    std::snprintf(line, sizeof(line), "%s,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f,%.2f\n",
                  quoted.c_str(), r.happy.precision, r.happy.recall, r.happy.f1,
                  r.sad.precision, r.sad.recall, r.sad.f1, r.accuracy);
    csv += line;
  }
  return {text, csv};
}

}  // namespace kexp
