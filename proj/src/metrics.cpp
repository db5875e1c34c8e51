#include "hola/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hola {

double auc(const ScoredSet& s) {
  if (s.scores.size() != s.labels.size())
    throw ShapeError("auc: scores and labels differ in length");
  const size_t n = s.scores.size();
  std::int64_t positives = 0;
  for (int y : s.labels) {
    if (y != 0 && y != 1) throw MetricError("auc: labels must be 0 or 1");
    positives += y;
  }
  const std::int64_t negatives = static_cast<std::int64_t>(n) - positives;
  if (positives < 1 || negatives < 1)
    throw MetricError("auc: undefined for single-class input");

  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return s.scores[a] < s.scores[b];
  });

  // Mean rank over each tie group, ranks starting at 1.
  double positive_rank_sum = 0.0;
  size_t i = 0;
  while (i < n) {
    size_t j = i;
    while (j < n && s.scores[order[j]] == s.scores[order[i]]) ++j;
    const double mean_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (size_t k = i; k < j; ++k)
      if (s.labels[order[k]] == 1) positive_rank_sum += mean_rank;
    i = j;
  }
  const double m = static_cast<double>(positives);
  const double correction = m * (m + 1.0) / 2.0;
  return (positive_rank_sum - correction) / (m * static_cast<double>(negatives));
}

MetricReport classification_metrics(const std::vector<int>& predictions,
                                    const std::vector<int>& labels) {
  if (predictions.size() != labels.size())
    throw ShapeError("classification_metrics: length mismatch");
  if (predictions.empty())
    throw MetricError("classification_metrics: empty input");

  MetricReport r;
  for (size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i], p = predictions[i];
    if ((y != 0 && y != 1) || (p != 0 && p != 1))
      throw MetricError("classification_metrics: values must be 0 or 1");
    r.confusion[static_cast<size_t>(y)][static_cast<size_t>(p)]++;
  }
  const double total = static_cast<double>(labels.size());
  const std::int64_t support0 = r.confusion[0][0] + r.confusion[0][1];
  const std::int64_t support1 = r.confusion[1][0] + r.confusion[1][1];
  if (support0 == 0 || support1 == 0)
    throw MetricError("classification_metrics: a class is absent from labels, "
                      "UAR undefined");

  r.acc = static_cast<double>(r.confusion[0][0] + r.confusion[1][1]) / total;

  const double recall0 = static_cast<double>(r.confusion[0][0]) / support0;
  const double recall1 = static_cast<double>(r.confusion[1][1]) / support1;
  r.uar = 0.5 * (recall0 + recall1);

  auto f1 = [&](int cls) {
    const auto tp = r.confusion[static_cast<size_t>(cls)][static_cast<size_t>(cls)];
    const auto fp = r.confusion[static_cast<size_t>(1 - cls)][static_cast<size_t>(cls)];
    const auto fn = r.confusion[static_cast<size_t>(cls)][static_cast<size_t>(1 - cls)];
    const double denom = static_cast<double>(2 * tp + fp + fn);
    return denom == 0.0 ? 0.0 : 2.0 * tp / denom;  // 0/0 -> 0
  };
  r.wa_f1 = (support0 * f1(0) + support1 * f1(1)) / total;
  return r;
}

MetricReport report_from_scores(const std::vector<double>& scores,
                                const std::vector<int>& labels) {
  std::vector<int> preds(scores.size());
  for (size_t i = 0; i < scores.size(); ++i) preds[i] = scores[i] >= 0.5 ? 1 : 0;
  MetricReport r = classification_metrics(preds, labels);
  r.auc = auc(ScoredSet{scores, labels});
  return r;
}

std::string MetricReport::to_record() const {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed;
  os << "{\"acc\":" << acc << ",\"uar\":" << uar << ",\"wa_f1\":" << wa_f1
     << ",\"auc\":" << auc << "}";
  return os.str();
}

}  // namespace hola
