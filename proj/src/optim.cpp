#include "hola/optim.hpp"

#include <cmath>

namespace hola {

Tensor ParamStore::insert(const std::string& name, std::vector<int> shape,
                          std::vector<double> data, bool is_param) {
  if (contains(name))
    throw ConfigError("ParamStore: duplicate name '" + name + "'");
  Tensor t = is_param ? parameter(std::move(shape), std::move(data))
                      : constant(std::move(shape), std::move(data));
  entries_.push_back({name, t, is_param});
  return t;
}

Tensor ParamStore::add(const std::string& name, std::vector<int> shape,
                       std::vector<double> data) {
  return insert(name, std::move(shape), std::move(data), true);
}

Tensor ParamStore::add_trunc_normal(const std::string& name,
                                    std::vector<int> shape, double stddev,
                                    Rng& rng) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)));
  for (auto& v : data) v = rng.trunc_normal(stddev);
  return insert(name, std::move(shape), std::move(data), true);
}

Tensor ParamStore::add_zeros(const std::string& name, std::vector<int> shape) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)), 0.0);
  return insert(name, std::move(shape), std::move(data), true);
}

Tensor ParamStore::add_ones(const std::string& name, std::vector<int> shape) {
  std::vector<double> data(static_cast<size_t>(shape_numel(shape)), 1.0);
  return insert(name, std::move(shape), std::move(data), true);
}

Tensor ParamStore::add_buffer(const std::string& name, std::vector<int> shape,
                              std::vector<double> data) {
  return insert(name, std::move(shape), std::move(data), false);
}

std::vector<Tensor> ParamStore::trainable() const {
  std::vector<Tensor> out;
  for (const auto& e : entries_)
    if (e.is_param) out.push_back(e.tensor);
  return out;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return e.tensor;
  throw ConfigError("ParamStore: no tensor named '" + name + "'");
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return true;
  return false;
}

std::int64_t ParamStore::total_parameters() const {
  std::int64_t n = 0;
  for (const auto& e : entries_)
    if (e.is_param) n += e.tensor.numel();
  return n;
}

void OptimConfig::validate() const {
  if (learning_rate < 0.0) throw ConfigError("optim: learning_rate must be >= 0");
  if (weight_decay < 0.0) throw ConfigError("optim: weight_decay must be >= 0");
  if (epochs < 1) throw ConfigError("optim: epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("optim: batch_size must be >= 1");
  if (warmup_frac < 0.0 || warmup_frac >= 1.0)
    throw ConfigError("optim: warmup_frac must lie in [0, 1)");
}

double cosine_lr(int step, int total_steps, int warmup_steps, double peak) {
  if (total_steps < 1) throw ConfigError("cosine_lr: total_steps must be >= 1");
  if (step < warmup_steps)
    return peak * static_cast<double>(step + 1) / warmup_steps;
  const int span = total_steps - warmup_steps;
  if (span <= 1) return peak;
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(span);
  return peak * 0.5 * (1.0 + std::cos(3.14159265358979323846 *
                                      std::min(1.0, progress)));
}

AdamW::AdamW(std::vector<Tensor> params, const OptimConfig& cfg)
    : params_(std::move(params)), cfg_(cfg) {
  cfg_.validate();
  for (const auto& p : params_) {
    m_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.numel()), 0.0);
  }
}

void AdamW::step(double lr_t) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
  for (size_t k = 0; k < params_.size(); ++k) {
    Tensor& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto w = p.mutable_data();
    auto& m = m_[k];
    auto& v = v_[k];
    for (size_t i = 0; i < w.size(); ++i) {
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      // Decoupled decay, applied to the pre-update weight and scaled by lr_t.
      w[i] -= lr_t * cfg_.weight_decay * w[i];
      w[i] -= lr_t * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
    }
  }
  zero_grad();
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace hola
