#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "hola/errors.hpp"

namespace hola {

// Binary scored evaluation set: scores are probabilities of the positive
// class (label 1 = fake), labels are 0/1.
struct ScoredSet {
  std::vector<double> scores;
  std::vector<int> labels;
};

// Rank-sum AUC with mean ranks for ties (equal to the Mann-Whitney
// statistic): ascending ranks starting at 1,
// AUC = (sum of positive ranks - M(M+1)/2) / (M*N).
double auc(const ScoredSet& s);

struct MetricReport {
  double acc = 0.0;
  double uar = 0.0;
  double wa_f1 = 0.0;
  double auc = 0.0;
  // confusion[true_class][predicted_class]
  std::array<std::array<std::int64_t, 2>, 2> confusion{};

  // Single structured text record with fixed field names.
  std::string to_record() const;
};

// ACC, UAR (mean of per-class recalls), and support-weighted F1 with the
// 0/0 -> 0 convention. Throws MetricError when a class is absent from labels.
MetricReport classification_metrics(const std::vector<int>& predictions,
                                    const std::vector<int>& labels);

// Full report from scores: predictions thresholded at 0.5, AUC from ranks.
MetricReport report_from_scores(const std::vector<double>& scores,
                                const std::vector<int>& labels);

}  // namespace hola
