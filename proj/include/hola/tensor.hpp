#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "hola/errors.hpp"

namespace hola {

namespace detail {
struct Node;
}

// Dense row-major float64 tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap shared handle to a graph node. All operations are free
// functions that compute the forward value eagerly and record a backward step;
// the graph is rebuilt on every forward pass (define-by-run). Values are
// immutable once created within a step; `mutable_data` exists for parameter
// updates and finite-difference harnesses between steps.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const std::vector<int>& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int dim(int i) const { return shape()[static_cast<size_t>(i)]; }
  std::int64_t numel() const;

  std::span<const double> data() const;
  // In-place value mutation for optimizers and numeric harnesses. Never call
  // on a tensor participating in a live graph.
  std::span<double> mutable_data();

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  void zero_grad();

  // Reverse-mode sweep from a scalar. Visits recorded operations in exact
  // reverse order of creation, accumulating into every reachable node that
  // requires a gradient.
  void backward();

  double item() const;

  std::shared_ptr<detail::Node> node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// When enabled (the default), every operation verifies its output is finite
// and throws NumericError otherwise.
void set_finite_checks(bool enabled);
bool finite_checks_enabled();

// ---- creation -------------------------------------------------------------

Tensor constant(std::vector<int> shape, std::vector<double> data);
Tensor zeros(std::vector<int> shape);
Tensor full(std::vector<int> shape, double value);
Tensor scalar_tensor(double value);
// A leaf that accumulates gradients (model parameter).
Tensor parameter(std::vector<int> shape, std::vector<double> data);

// ---- elementwise and structural ops ----------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor reshape(const Tensor& a, std::vector<int> shape);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor slice_rows(const Tensor& a, int start, int count);
Tensor slice_cols(const Tensor& a, int start, int count);
Tensor gather_rows(const Tensor& a, const std::vector<int>& indices);
Tensor tile_rows(const Tensor& row, int count);       // [1xC] -> [count x C]
Tensor add_rowvec(const Tensor& a, const Tensor& v);  // broadcast [C] over rows

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// matmul(x, w) + bias broadcast over rows.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// ---- neural-net kernels -----------------------------------------------------

// Numerically stable softmax along `axis`; subtracts the per-slice maximum
// before exponentiation.
Tensor softmax(const Tensor& a, int axis);

// Normalizes each length-C row of x (last dimension) to zero mean / unit
// variance, then applies the affine transform gamma * xhat + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

// Unfolds [L x C_in] into sliding windows [L' x K*C_in] with zero padding;
// column order is (tap, channel).
Tensor im2col(const Tensor& x, int kernel, int stride, int padding);

// Cross-correlation along the sequence axis. x: [L x C_in],
// w: [K x C_in x C_out], bias: [C_out]; output [L' x C_out] with
// L' = floor((L + 2*padding - K)/stride) + 1.
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding);

// Batch normalization over rows (per-channel statistics across all R rows).
// Training mode uses batch statistics and optionally reports them via
// batch_mean/batch_var so the caller can maintain running averages.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        double eps, std::vector<double>* batch_mean = nullptr,
                        std::vector<double>* batch_var = nullptr);
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const std::vector<double>& running_mean,
                       const std::vector<double>& running_var, double eps);

// ---- reductions and losses ---------------------------------------------------

Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor gap_rows(const Tensor& a);  // [R x C] -> [1 x C] mean over rows
Tensor mse_loss(const Tensor& pred, const Tensor& target);
// Mean cross-entropy of row-wise softmax(logits) against integer labels.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// ---- verification harness -----------------------------------------------------

// Central-difference check of d f / d theta. Returns
// max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& theta, double h);

// Same check for a closure over several live parameter tensors: the loss is
// rebuilt while each coordinate of each parameter is nudged in place.
double grad_check_params(const std::function<Tensor()>& loss,
                         std::span<const Tensor> params, double h);

}  // namespace hola
