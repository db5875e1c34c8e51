#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "hola/metrics.hpp"
#include "hola/model.hpp"
#include "hola/optim.hpp"

namespace hola {

// One training-set entry with an audit trail: ground-truth labels are never
// overwritten and every pseudo label records its injection round and
// confidence.
struct LabeledExample {
  std::string id;
  int label = 0;  // 0 real, 1 fake
  bool pseudo = false;
  int iteration = 0;      // injection round (0 for ground truth)
  double confidence = 1.0;
};

class LabeledSet {
 public:
  void add_ground_truth(const std::string& id, int label);
  void add_pseudo(const std::string& id, int label, int iteration,
                  double confidence);
  bool contains(const std::string& id) const;
  const std::vector<LabeledExample>& entries() const { return entries_; }
  int size() const { return static_cast<int>(entries_.size()); }
  int count_label(int label) const;

 private:
  std::vector<LabeledExample> entries_;
};

// Feature lookup by sample id (ordered for deterministic iteration).
using FeatureIndex = std::map<std::string, const SampleFeatures*>;

FeatureIndex build_feature_index(std::span<const DatasetSample> samples);

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  bool has_val = false;
  double val_auc = 0.0;
  double val_acc = 0.0;
};

struct FinetuneResult {
  std::vector<EpochRecord> history;
};

// Supervised fine-tuning with cross-entropy over softmax logits. Refuses
// single-class training sets; reports validation metrics per epoch when a
// validation split is provided. Deterministic under cfg.seed.
FinetuneResult finetune(FinetuneModel& model, const LabeledSet& train,
                        const FeatureIndex& features,
                        std::span<const DatasetSample> val,
                        const OptimConfig& cfg, std::ostream* log = nullptr);

// Eval-mode scores over a sample list: P(fake) per sample, manifest order.
std::vector<double> score_samples(FinetuneModel& model,
                                  std::span<const DatasetSample> samples);

struct InjectionConfig {
  double confidence_threshold = 0.999;  // tau
  int max_iterations = 5;               // K
  int per_class_cap = 0;                // 0 disables the cap

  void validate() const;
};

struct Injection {
  std::string id;
  int label = 0;
  double confidence = 0.0;
};

struct InjectResult {
  std::vector<Injection> injected;
  std::vector<std::string> remaining;  // pool order preserved
};

// Runs eval-mode inference over the pool and moves every sample whose top
// class probability reaches tau. Empty selections are valid.
InjectResult inject_pseudo(FinetuneModel& model,
                           const std::vector<std::string>& pool,
                           const FeatureIndex& features, double tau,
                           int per_class_cap = 0);

struct IterationRecord {
  int iteration = 0;
  int injected_real = 0;
  int injected_fake = 0;
  int train_size = 0;
  bool has_val = false;
  double val_auc = 0.0;
  double val_acc = 0.0;
};

struct SelfTrainResult {
  std::vector<IterationRecord> iterations;
};

// K rounds of finetune -> inject -> grow. Each round warm-starts from the
// previous round's weights. The optional callback observes the model after
// every round (checkpointing hook).
SelfTrainResult selftrain_loop(
    FinetuneModel& model, LabeledSet train, std::vector<std::string> pool,
    const FeatureIndex& features, std::span<const DatasetSample> val,
    const InjectionConfig& inj, const OptimConfig& cfg,
    std::ostream* log = nullptr,
    const std::function<void(int, FinetuneModel&)>& after_round = {});

}  // namespace hola
