#include "hola/selftrain.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

namespace hola {

void LabeledSet::add_ground_truth(const std::string& id, int label) {
  if (contains(id))
    throw ConfigError("LabeledSet: duplicate id '" + id + "'");
  entries_.push_back({id, label, false, 0, 1.0});
}

void LabeledSet::add_pseudo(const std::string& id, int label, int iteration,
                            double confidence) {
  if (contains(id))
    throw ConfigError("LabeledSet: refusing to overwrite existing id '" + id + "'");
  entries_.push_back({id, label, true, iteration, confidence});
}

bool LabeledSet::contains(const std::string& id) const {
  for (const auto& e : entries_)
    if (e.id == id) return true;
  return false;
}

int LabeledSet::count_label(int label) const {
  int n = 0;
  for (const auto& e : entries_) n += e.label == label;
  return n;
}

FeatureIndex build_feature_index(std::span<const DatasetSample> samples) {
  FeatureIndex idx;
  for (const auto& s : samples) idx[s.rec.id] = &s.feats;
  return idx;
}

namespace {

const SampleFeatures& features_for(const FeatureIndex& features,
                                   const std::string& id) {
  const auto it = features.find(id);
  if (it == features.end())
    throw DataError("no features for sample id '" + id + "'");
  return *it->second;
}

}  // namespace

std::vector<double> score_samples(FinetuneModel& model,
                                  std::span<const DatasetSample> samples) {
  std::vector<double> scores;
  scores.reserve(samples.size());
  for (const auto& s : samples) scores.push_back(fake_probability(model, s.feats));
  return scores;
}

FinetuneResult finetune(FinetuneModel& model, const LabeledSet& train,
                        const FeatureIndex& features,
                        std::span<const DatasetSample> val,
                        const OptimConfig& cfg, std::ostream* log) {
  cfg.validate();
  if (train.size() == 0) throw DataError("finetune: empty training set");
  if (train.count_label(0) == 0 || train.count_label(1) == 0)
    throw DataError("finetune: training set must contain both classes");

  AdamW opt(model.params.trainable(), cfg);
  const int n = train.size();
  const int batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int total_steps = cfg.epochs * batches_per_epoch;
  const int warmup = static_cast<int>(std::llround(cfg.warmup_frac * total_steps));

  Rng order_rng(cfg.seed);
  FinetuneResult result;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
    order_rng.shuffle(order);

    double loss_sum = 0.0;
    int correct = 0;
    for (int b = 0; b < batches_per_epoch; ++b) {
      std::vector<SampleFeatures> batch;
      std::vector<int> labels;
      for (int i = b * cfg.batch_size; i < std::min(n, (b + 1) * cfg.batch_size); ++i) {
        const auto& entry = train.entries()[static_cast<size_t>(order[static_cast<size_t>(i)])];
        batch.push_back(features_for(features, entry.id));
        labels.push_back(entry.label);
      }
      Tensor logits = finetune_logits(model, batch, /*training=*/true);
      Tensor loss = softmax_cross_entropy(logits, labels);
      const double loss_value = loss.item();
      if (!std::isfinite(loss_value))
        throw NumericError("finetune: non-finite loss at step " + std::to_string(step));
      for (size_t r = 0; r < labels.size(); ++r) {
        const int pred =
            logits.data()[2 * r + 1] > logits.data()[2 * r] ? 1 : 0;
        correct += pred == labels[r];
      }
      loss.backward();
      opt.step(cosine_lr(step, total_steps, warmup, cfg.learning_rate));
      loss_sum += loss_value * static_cast<double>(labels.size());
      ++step;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / n;
    rec.train_acc = static_cast<double>(correct) / n;
    if (!val.empty()) {
      std::vector<double> scores = score_samples(model, val);
      std::vector<int> labels;
      for (const auto& s : val) labels.push_back(s.label);
      MetricReport report = report_from_scores(scores, labels);
      rec.has_val = true;
      rec.val_auc = report.auc;
      rec.val_acc = report.acc;
    }
    result.history.push_back(rec);
    if (log) {
      std::ostringstream line;
      line.precision(10);
      line << "{\"epoch\":" << rec.epoch << ",\"train_loss\":" << rec.train_loss
           << ",\"train_acc\":" << rec.train_acc;
      if (rec.has_val)
        line << ",\"val_auc\":" << rec.val_auc << ",\"val_acc\":" << rec.val_acc;
      line << "}";
      *log << line.str() << "\n";
    }
  }
  return result;
}

void InjectionConfig::validate() const {
  if (!(confidence_threshold > 0.5))
    throw ConfigError("injection: tau must be > 0.5");
  if (max_iterations < 1) throw ConfigError("injection: K must be >= 1");
  if (per_class_cap < 0) throw ConfigError("injection: cap must be >= 0");
}

InjectResult inject_pseudo(FinetuneModel& model,
                           const std::vector<std::string>& pool,
                           const FeatureIndex& features, double tau,
                           int per_class_cap) {
  InjectResult result;
  std::vector<Injection> candidates;
  for (const auto& id : pool) {
    const double p_fake = fake_probability(model, features_for(features, id));
    const int label = p_fake >= 0.5 ? 1 : 0;
    const double confidence = label == 1 ? p_fake : 1.0 - p_fake;
    if (confidence >= tau)
      candidates.push_back({id, label, confidence});
  }
  if (per_class_cap > 0) {
    // Keep the most confident entries per class; stable on ties by id.
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Injection& a, const Injection& b) {
                       if (a.confidence != b.confidence)
                         return a.confidence > b.confidence;
                       return a.id < b.id;
                     });
    std::vector<Injection> capped;
    int taken[2] = {0, 0};
    for (const auto& c : candidates) {
      if (taken[c.label] >= per_class_cap) continue;
      ++taken[c.label];
      capped.push_back(c);
    }
    candidates = std::move(capped);
  }
  for (const auto& id : pool) {
    const bool selected =
        std::any_of(candidates.begin(), candidates.end(),
                    [&](const Injection& c) { return c.id == id; });
    if (!selected) result.remaining.push_back(id);
  }
  result.injected = std::move(candidates);
  return result;
}

SelfTrainResult selftrain_loop(
    FinetuneModel& model, LabeledSet train, std::vector<std::string> pool,
    const FeatureIndex& features, std::span<const DatasetSample> val,
    const InjectionConfig& inj, const OptimConfig& cfg, std::ostream* log,
    const std::function<void(int, FinetuneModel&)>& after_round) {
  inj.validate();
  SelfTrainResult result;
  for (int iteration = 1; iteration <= inj.max_iterations; ++iteration) {
    OptimConfig round_cfg = cfg;
    round_cfg.seed = cfg.seed + static_cast<std::uint64_t>(iteration) - 1;
    finetune(model, train, features, val, round_cfg, nullptr);

    InjectResult moved =
        inject_pseudo(model, pool, features, inj.confidence_threshold,
                      inj.per_class_cap);
    IterationRecord rec;
    rec.iteration = iteration;
    for (const auto& c : moved.injected) {
      train.add_pseudo(c.id, c.label, iteration, c.confidence);
      (c.label == 1 ? rec.injected_fake : rec.injected_real)++;
    }
    pool = std::move(moved.remaining);
    rec.train_size = train.size();
    if (!val.empty()) {
      std::vector<double> scores = score_samples(model, val);
      std::vector<int> labels;
      for (const auto& s : val) labels.push_back(s.label);
      MetricReport report = report_from_scores(scores, labels);
      rec.has_val = true;
      rec.val_auc = report.auc;
      rec.val_acc = report.acc;
    }
    result.iterations.push_back(rec);
    if (log) {
      std::ostringstream line;
      line.precision(10);
      line << "{\"iteration\":" << rec.iteration
           << ",\"injected_real\":" << rec.injected_real
           << ",\"injected_fake\":" << rec.injected_fake
           << ",\"train_size\":" << rec.train_size;
      if (rec.has_val)
        line << ",\"val_auc\":" << rec.val_auc << ",\"val_acc\":" << rec.val_acc;
      line << "}";
      *log << line.str() << "\n";
    }
    if (after_round) after_round(iteration, model);
  }
  return result;
}

}  // namespace hola
