#pragma once

#include <string>
#include <vector>

#include "hola/errors.hpp"
#include "hola/rng.hpp"
#include "hola/tensor.hpp"

namespace hola {

// Named registry of model tensors in registration order. Parameters are
// trainable; buffers (batch-norm running statistics) are persisted but never
// touched by the optimizer.
class ParamStore {
 public:
  Tensor add(const std::string& name, std::vector<int> shape,
             std::vector<double> data);
  Tensor add_trunc_normal(const std::string& name, std::vector<int> shape,
                          double stddev, Rng& rng);
  Tensor add_zeros(const std::string& name, std::vector<int> shape);
  Tensor add_ones(const std::string& name, std::vector<int> shape);
  Tensor add_buffer(const std::string& name, std::vector<int> shape,
                    std::vector<double> data);

  struct Entry {
    std::string name;
    Tensor tensor;
    bool is_param = true;
  };

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Tensor> trainable() const;
  Tensor find(const std::string& name) const;
  bool contains(const std::string& name) const;
  std::int64_t total_parameters() const;

 private:
  Tensor insert(const std::string& name, std::vector<int> shape,
                std::vector<double> data, bool is_param);
  std::vector<Entry> entries_;
};

struct OptimConfig {
  double learning_rate = 1.5e-4;
  double weight_decay = 2e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double warmup_frac = 0.05;
  int epochs = 1;
  int batch_size = 8;
  std::uint64_t seed = 0;

  void validate() const;
};

// Cosine-annealed rate with a linear warmup over warmup_steps. The first
// post-warmup step runs at exactly `peak`; the final step decays toward zero.
double cosine_lr(int step, int total_steps, int warmup_steps, double peak);

// Decoupled-weight-decay Adam. The decay term is scaled by the step rate, so
// a zero learning rate leaves parameters bit-identical.
class AdamW {
 public:
  AdamW(std::vector<Tensor> params, const OptimConfig& cfg);

  // Applies one update at rate `lr_t` using currently accumulated gradients,
  // then clears them.
  void step(double lr_t);

  void zero_grad();

 private:
  std::vector<Tensor> params_;
  OptimConfig cfg_;
  int t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace hola
