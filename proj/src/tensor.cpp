#include "hola/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>

namespace hola {

namespace detail {

struct Node {
  std::vector<int> shape;
  std::vector<double> value;
  std::vector<double> grad;  // sized lazily, zero-initialized
  bool requires_grad = false;
  std::uint64_t seq = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;
};

namespace {

std::atomic<std::uint64_t> g_seq{0};
bool g_finite_checks = true;

using RowMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using CMatMap = Eigen::Map<const RowMat>;

std::shared_ptr<Node> make_node(std::vector<int> shape,
                                std::vector<std::shared_ptr<Node>> parents) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->seq = g_seq.fetch_add(1, std::memory_order_relaxed);
  for (const auto& p : parents) {
    if (p->requires_grad) n->requires_grad = true;
  }
  n->parents = std::move(parents);
  return n;
}

void check_finite(const Node& n, const char* op) {
  if (!g_finite_checks) return;
  for (double v : n.value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by ") + op);
    }
  }
}

void ensure_grad(Node& n) {
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

// Adds src into dst's gradient buffer if dst participates in the sweep.
void accumulate(const std::shared_ptr<Node>& dst, const double* src,
                std::size_t count) {
  if (!dst->requires_grad) return;
  ensure_grad(*dst);
  for (std::size_t i = 0; i < count; ++i) dst->grad[i] += src[i];
}

const std::vector<int>& shape_of(const Tensor& t) { return t.node()->shape; }

void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

}  // namespace
}  // namespace detail

using detail::CMatMap;
using detail::MatMap;
using detail::Node;

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

void set_finite_checks(bool enabled) { detail::g_finite_checks = enabled; }
bool finite_checks_enabled() { return detail::g_finite_checks; }

const std::vector<int>& Tensor::shape() const { return node_->shape; }

std::int64_t Tensor::numel() const {
  return static_cast<std::int64_t>(node_->value.size());
}

std::span<const double> Tensor::data() const {
  return {node_->value.data(), node_->value.size()};
}

std::span<double> Tensor::mutable_data() {
  return {node_->value.data(), node_->value.size()};
}

bool Tensor::requires_grad() const { return node_->requires_grad; }

bool Tensor::has_grad() const { return !node_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (node_->grad.empty())
    throw NumericError("gradient requested but none has been computed");
  return {node_->grad.data(), node_->grad.size()};
}

void Tensor::zero_grad() { node_->grad.clear(); }

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() requires a scalar tensor");
  return node_->value[0];
}

void Tensor::backward() {
  if (numel() != 1)
    throw ShapeError("backward() must start from a scalar tensor");
  // Collect the reachable subgraph, then run in exact reverse creation order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<Node*> stack{node_.get()};
  seen.insert(node_.get());
  while (!stack.empty()) {
    Node* n = stack.back();
    stack.pop_back();
    order.push_back(n);
    for (const auto& p : n->parents) {
      if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
  }
  std::sort(order.begin(), order.end(),
            [](const Node* a, const Node* b) { return a->seq > b->seq; });
  detail::ensure_grad(*node_);
  node_->grad[0] = 1.0;
  for (Node* n : order) {
    if (n->backward_fn && n->requires_grad && !n->grad.empty()) {
      n->backward_fn(*n);
    }
  }
}

// ---- creation ---------------------------------------------------------------

Tensor constant(std::vector<int> shape, std::vector<double> data) {
  auto numel = shape_numel(shape);
  if (numel != static_cast<std::int64_t>(data.size()))
    throw ShapeError("data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  auto n = detail::make_node(std::move(shape), {});
  n->value = std::move(data);
  detail::check_finite(*n, "constant");
  return Tensor(n);
}

Tensor zeros(std::vector<int> shape) {
  auto numel = shape_numel(shape);
  auto n = detail::make_node(std::move(shape), {});
  n->value.assign(static_cast<size_t>(numel), 0.0);
  return Tensor(n);
}

Tensor full(std::vector<int> shape, double value) {
  auto numel = shape_numel(shape);
  auto n = detail::make_node(std::move(shape), {});
  n->value.assign(static_cast<size_t>(numel), value);
  detail::check_finite(*n, "full");
  return Tensor(n);
}

Tensor scalar_tensor(double value) { return full({1}, value); }

Tensor parameter(std::vector<int> shape, std::vector<double> data) {
  Tensor t = constant(std::move(shape), std::move(data));
  t.node()->requires_grad = true;
  return t;
}

// ---- elementwise ------------------------------------------------------------

namespace {

Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name,
                         double (*fwd)(double, double), int mode) {
  detail::require(a.shape() == b.shape(),
                  std::string(name) + ": shape mismatch " +
                      shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  auto n = detail::make_node(a.shape(), {a.node(), b.node()});
  const auto& av = a.node()->value;
  const auto& bv = b.node()->value;
  n->value.resize(av.size());
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = fwd(av[i], bv[i]);
  detail::check_finite(*n, name);
  if (n->requires_grad) {
    auto pa = a.node();
    auto pb = b.node();
    n->backward_fn = [pa, pb, mode](Node& self) {
      const auto& g = self.grad;
      if (mode == 0) {  // add
        detail::accumulate(pa, g.data(), g.size());
        detail::accumulate(pb, g.data(), g.size());
      } else if (mode == 1) {  // sub
        detail::accumulate(pa, g.data(), g.size());
        if (pb->requires_grad) {
          detail::ensure_grad(*pb);
          for (size_t i = 0; i < g.size(); ++i) pb->grad[i] -= g[i];
        }
      } else {  // mul
        if (pa->requires_grad) {
          detail::ensure_grad(*pa);
          for (size_t i = 0; i < g.size(); ++i)
            pa->grad[i] += g[i] * pb->value[i];
        }
        if (pb->requires_grad) {
          detail::ensure_grad(*pb);
          for (size_t i = 0; i < g.size(); ++i)
            pb->grad[i] += g[i] * pa->value[i];
        }
      }
    };
  }
  return Tensor(n);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "add", [](double x, double y) { return x + y; }, 0);
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "sub", [](double x, double y) { return x - y; }, 1);
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_same_shape(
      a, b, "mul", [](double x, double y) { return x * y; }, 2);
}

Tensor scale(const Tensor& a, double s) {
  auto n = detail::make_node(a.shape(), {a.node()});
  const auto& av = a.node()->value;
  n->value.resize(av.size());
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] * s;
  detail::check_finite(*n, "scale");
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa, s](Node& self) {
      detail::ensure_grad(*pa);
      for (size_t i = 0; i < self.grad.size(); ++i)
        pa->grad[i] += self.grad[i] * s;
    };
  }
  return Tensor(n);
}

Tensor relu(const Tensor& a) {
  auto n = detail::make_node(a.shape(), {a.node()});
  const auto& av = a.node()->value;
  n->value.resize(av.size());
  for (size_t i = 0; i < av.size(); ++i) n->value[i] = av[i] > 0 ? av[i] : 0.0;
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa](Node& self) {
      detail::ensure_grad(*pa);
      for (size_t i = 0; i < self.grad.size(); ++i)
        if (pa->value[i] > 0) pa->grad[i] += self.grad[i];
    };
  }
  return Tensor(n);
}

Tensor sigmoid(const Tensor& a) {
  auto n = detail::make_node(a.shape(), {a.node()});
  const auto& av = a.node()->value;
  n->value.resize(av.size());
  for (size_t i = 0; i < av.size(); ++i) {
    double x = av[i];
    // Branch on sign so exp never overflows.
    n->value[i] = x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                         : std::exp(x) / (1.0 + std::exp(x));
  }
  detail::check_finite(*n, "sigmoid");
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa](Node& self) {
      detail::ensure_grad(*pa);
      for (size_t i = 0; i < self.grad.size(); ++i) {
        double y = self.value[i];
        pa->grad[i] += self.grad[i] * y * (1.0 - y);
      }
    };
  }
  return Tensor(n);
}

Tensor reshape(const Tensor& a, std::vector<int> shape) {
  if (shape_numel(shape) != a.numel())
    throw ShapeError("reshape: element count mismatch " +
                     shape_str(a.shape()) + " -> " + shape_str(shape));
  auto n = detail::make_node(std::move(shape), {a.node()});
  n->value = a.node()->value;
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa](Node& self) {
      detail::accumulate(pa, self.grad.data(), self.grad.size());
    };
  }
  return Tensor(n);
}

Tensor concat(std::span<const Tensor> parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const auto& s0 = parts[0].shape();
  const int rank = static_cast<int>(s0.size());
  if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range");
  std::vector<int> out_shape = s0;
  int axis_total = 0;
  for (const auto& p : parts) {
    const auto& s = p.shape();
    detail::require(static_cast<int>(s.size()) == rank,
                    "concat: rank mismatch");
    for (int d = 0; d < rank; ++d)
      detail::require(d == axis || s[d] == s0[d],
                      "concat: non-axis dimension mismatch");
    axis_total += s[axis];
  }
  out_shape[axis] = axis_total;

  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= s0[d];
  for (int d = axis + 1; d < rank; ++d) inner *= s0[d];

  std::vector<std::shared_ptr<Node>> parents;
  parents.reserve(parts.size());
  for (const auto& p : parts) parents.push_back(p.node());
  auto n = detail::make_node(out_shape, parents);
  n->value.resize(static_cast<size_t>(shape_numel(out_shape)));

  // Copy blocks of (part_axis * inner) per outer index.
  std::int64_t axis_off = 0;
  for (const auto& p : parts) {
    const std::int64_t pa = p.shape()[axis];
    const auto& pv = p.node()->value;
    for (std::int64_t o = 0; o < outer; ++o) {
      std::memcpy(
          n->value.data() + (o * axis_total + axis_off) * inner,
          pv.data() + o * pa * inner,
          static_cast<size_t>(pa * inner) * sizeof(double));
    }
    axis_off += pa;
  }
  if (n->requires_grad) {
    std::vector<std::int64_t> axis_sizes;
    for (const auto& p : parts) axis_sizes.push_back(p.shape()[axis]);
    n->backward_fn = [parents = n->parents, axis_sizes, outer, inner,
                      axis_total](Node& self) {
      std::int64_t off = 0;
      for (size_t k = 0; k < parents.size(); ++k) {
        const std::int64_t pa = axis_sizes[k];
        auto& dst = parents[k];
        if (dst->requires_grad) {
          detail::ensure_grad(*dst);
          for (std::int64_t o = 0; o < outer; ++o) {
            const double* src = self.grad.data() + (o * axis_total + off) * inner;
            double* out = dst->grad.data() + o * pa * inner;
            for (std::int64_t i = 0; i < pa * inner; ++i) out[i] += src[i];
          }
        }
        off += pa;
      }
    };
  }
  return Tensor(n);
}

namespace {

Tensor slice2d(const Tensor& a, int start, int count, bool rows,
               const char* name) {
  detail::require(a.rank() == 2, std::string(name) + ": expects a matrix");
  const int R = a.dim(0), C = a.dim(1);
  const int limit = rows ? R : C;
  if (start < 0 || count < 1 || start + count > limit)
    throw ShapeError(std::string(name) + ": range [" + std::to_string(start) +
                     ", " + std::to_string(start + count) + ") out of bounds");
  std::vector<int> out_shape = rows ? std::vector<int>{count, C}
                                    : std::vector<int>{R, count};
  auto n = detail::make_node(out_shape, {a.node()});
  n->value.resize(static_cast<size_t>(shape_numel(out_shape)));
  const auto& av = a.node()->value;
  if (rows) {
    std::memcpy(n->value.data(), av.data() + static_cast<size_t>(start) * C,
                static_cast<size_t>(count) * C * sizeof(double));
  } else {
    for (int r = 0; r < R; ++r)
      std::memcpy(n->value.data() + static_cast<size_t>(r) * count,
                  av.data() + static_cast<size_t>(r) * C + start,
                  static_cast<size_t>(count) * sizeof(double));
  }
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa, start, count, rows, R, C](Node& self) {
      detail::ensure_grad(*pa);
      if (rows) {
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(count) * C; ++i)
          pa->grad[static_cast<size_t>(start) * C + i] += self.grad[i];
      } else {
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < count; ++c)
            pa->grad[static_cast<size_t>(r) * C + start + c] +=
                self.grad[static_cast<size_t>(r) * count + c];
      }
    };
  }
  return Tensor(n);
}

}  // namespace

Tensor slice_rows(const Tensor& a, int start, int count) {
  return slice2d(a, start, count, true, "slice_rows");
}

Tensor slice_cols(const Tensor& a, int start, int count) {
  return slice2d(a, start, count, false, "slice_cols");
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& indices) {
  detail::require(a.rank() == 2, "gather_rows: expects a matrix");
  if (indices.empty()) throw ShapeError("gather_rows: empty index list");
  const int R = a.dim(0), C = a.dim(1);
  for (int idx : indices)
    if (idx < 0 || idx >= R)
      throw ShapeError("gather_rows: index " + std::to_string(idx) +
                       " out of range [0, " + std::to_string(R) + ")");
  auto n = detail::make_node({static_cast<int>(indices.size()), C}, {a.node()});
  n->value.resize(indices.size() * static_cast<size_t>(C));
  const auto& av = a.node()->value;
  for (size_t i = 0; i < indices.size(); ++i)
    std::memcpy(n->value.data() + i * C,
                av.data() + static_cast<size_t>(indices[i]) * C,
                static_cast<size_t>(C) * sizeof(double));
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa, indices, C](Node& self) {
      detail::ensure_grad(*pa);
      for (size_t i = 0; i < indices.size(); ++i)
        for (int c = 0; c < C; ++c)
          pa->grad[static_cast<size_t>(indices[i]) * C + c] +=
              self.grad[i * C + c];
    };
  }
  return Tensor(n);
}

Tensor tile_rows(const Tensor& row, int count) {
  detail::require(row.rank() == 2 && row.dim(0) == 1,
                  "tile_rows: expects a [1xC] row");
  if (count < 1) throw ShapeError("tile_rows: count must be positive");
  const int C = row.dim(1);
  auto n = detail::make_node({count, C}, {row.node()});
  n->value.resize(static_cast<size_t>(count) * C);
  for (int r = 0; r < count; ++r)
    std::memcpy(n->value.data() + static_cast<size_t>(r) * C,
                row.node()->value.data(), static_cast<size_t>(C) * sizeof(double));
  if (n->requires_grad) {
    auto pa = row.node();
    n->backward_fn = [pa, count, C](Node& self) {
      detail::ensure_grad(*pa);
      for (int r = 0; r < count; ++r)
        for (int c = 0; c < C; ++c)
          pa->grad[c] += self.grad[static_cast<size_t>(r) * C + c];
    };
  }
  return Tensor(n);
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
  detail::require(a.rank() == 2, "add_rowvec: expects a matrix");
  const int R = a.dim(0), C = a.dim(1);
  const bool ok = (v.rank() == 1 && v.dim(0) == C) ||
                  (v.rank() == 2 && v.dim(0) == 1 && v.dim(1) == C);
  detail::require(ok, "add_rowvec: vector length " + shape_str(v.shape()) +
                          " does not match row width " + std::to_string(C));
  auto n = detail::make_node(a.shape(), {a.node(), v.node()});
  const auto& av = a.node()->value;
  const auto& vv = v.node()->value;
  n->value.resize(av.size());
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      n->value[static_cast<size_t>(r) * C + c] =
          av[static_cast<size_t>(r) * C + c] + vv[static_cast<size_t>(c)];
  detail::check_finite(*n, "add_rowvec");
  if (n->requires_grad) {
    auto pa = a.node();
    auto pv = v.node();
    n->backward_fn = [pa, pv, R, C](Node& self) {
      detail::accumulate(pa, self.grad.data(), self.grad.size());
      if (pv->requires_grad) {
        detail::ensure_grad(*pv);
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < C; ++c)
            pv->grad[static_cast<size_t>(c)] +=
                self.grad[static_cast<size_t>(r) * C + c];
      }
    };
  }
  return Tensor(n);
}

// ---- linear algebra -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require(a.rank() == 2 && b.rank() == 2, "matmul: expects matrices");
  const int M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
  detail::require(K == K2, "matmul: inner dimensions disagree " +
                               shape_str(a.shape()) + " x " +
                               shape_str(b.shape()));
  auto n = detail::make_node({M, N}, {a.node(), b.node()});
  n->value.resize(static_cast<size_t>(M) * N);
  {
    CMatMap ma(a.node()->value.data(), M, K);
    CMatMap mb(b.node()->value.data(), K, N);
    MatMap mo(n->value.data(), M, N);
    mo.noalias() = ma * mb;
  }
  detail::check_finite(*n, "matmul");
  if (n->requires_grad) {
    auto pa = a.node();
    auto pb = b.node();
    n->backward_fn = [pa, pb, M, K, N](Node& self) {
      CMatMap gy(self.grad.data(), M, N);
      if (pa->requires_grad) {
        detail::ensure_grad(*pa);
        CMatMap mb(pb->value.data(), K, N);
        MatMap ga(pa->grad.data(), M, K);
        ga.noalias() += gy * mb.transpose();
      }
      if (pb->requires_grad) {
        detail::ensure_grad(*pb);
        CMatMap ma(pa->value.data(), M, K);
        MatMap gb(pb->grad.data(), K, N);
        gb.noalias() += ma.transpose() * gy;
      }
    };
  }
  return Tensor(n);
}

Tensor transpose(const Tensor& a) {
  detail::require(a.rank() == 2, "transpose: expects a matrix");
  const int R = a.dim(0), C = a.dim(1);
  auto n = detail::make_node({C, R}, {a.node()});
  n->value.resize(a.node()->value.size());
  {
    CMatMap ma(a.node()->value.data(), R, C);
    MatMap mo(n->value.data(), C, R);
    mo = ma.transpose();
  }
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa, R, C](Node& self) {
      detail::ensure_grad(*pa);
      CMatMap gy(self.grad.data(), C, R);
      MatMap ga(pa->grad.data(), R, C);
      ga.noalias() += gy.transpose();
    };
  }
  return Tensor(n);
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowvec(matmul(x, w), b);
}

// ---- neural-net kernels ---------------------------------------------------------

Tensor softmax(const Tensor& a, int axis) {
  const int rank = a.rank();
  if (axis < 0 || axis >= rank) throw ShapeError("softmax: axis out of range");
  const auto& sh = a.shape();
  std::int64_t outer = 1, inner = 1;
  for (int d = 0; d < axis; ++d) outer *= sh[d];
  for (int d = axis + 1; d < rank; ++d) inner *= sh[d];
  const std::int64_t len = sh[axis];

  auto n = detail::make_node(a.shape(), {a.node()});
  const auto& av = a.node()->value;
  n->value.resize(av.size());
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t i = 0; i < inner; ++i) {
      const std::int64_t base = o * len * inner + i;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::int64_t j = 0; j < len; ++j)
        mx = std::max(mx, av[base + j * inner]);
      double sum = 0.0;
      for (std::int64_t j = 0; j < len; ++j) {
        double e = std::exp(av[base + j * inner] - mx);
        n->value[base + j * inner] = e;
        sum += e;
      }
      for (std::int64_t j = 0; j < len; ++j) n->value[base + j * inner] /= sum;
    }
  }
  detail::check_finite(*n, "softmax");
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa, outer, inner, len](Node& self) {
      detail::ensure_grad(*pa);
      for (std::int64_t o = 0; o < outer; ++o) {
        for (std::int64_t i = 0; i < inner; ++i) {
          const std::int64_t base = o * len * inner + i;
          double dot = 0.0;
          for (std::int64_t j = 0; j < len; ++j)
            dot += self.grad[base + j * inner] * self.value[base + j * inner];
          for (std::int64_t j = 0; j < len; ++j) {
            const std::int64_t k = base + j * inner;
            pa->grad[k] += self.value[k] * (self.grad[k] - dot);
          }
        }
      }
    };
  }
  return Tensor(n);
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  detail::require(x.rank() >= 1, "layer_norm: empty shape");
  const int C = x.shape().back();
  detail::require(gamma.numel() == C && beta.numel() == C,
                  "layer_norm: affine parameters must have length " +
                      std::to_string(C));
  const std::int64_t R = x.numel() / C;

  auto n = detail::make_node(x.shape(), {x.node(), gamma.node(), beta.node()});
  const auto& xv = x.node()->value;
  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  n->value.resize(xv.size());

  // Saved for backward: normalized rows and per-row reciprocal stddev.
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(R);
  for (std::int64_t r = 0; r < R; ++r) {
    const double* row = xv.data() + r * C;
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += row[c];
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= C;
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (int c = 0; c < C; ++c) {
      const double xh = (row[c] - mean) * is;
      (*xhat)[r * C + c] = xh;
      n->value[r * C + c] = gv[c] * xh + bv[c];
    }
  }
  detail::check_finite(*n, "layer_norm");
  if (n->requires_grad) {
    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    n->backward_fn = [px, pg, pb, xhat, inv_std, R, C](Node& self) {
      for (std::int64_t r = 0; r < R; ++r) {
        const double* gy = self.grad.data() + r * C;
        const double* xh = xhat->data() + r * C;
        if (pg->requires_grad) {
          detail::ensure_grad(*pg);
          for (int c = 0; c < C; ++c) pg->grad[c] += gy[c] * xh[c];
        }
        if (pb->requires_grad) {
          detail::ensure_grad(*pb);
          for (int c = 0; c < C; ++c) pb->grad[c] += gy[c];
        }
        if (px->requires_grad) {
          detail::ensure_grad(*px);
          double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
          for (int c = 0; c < C; ++c) {
            const double dxh = gy[c] * pg->value[c];
            sum_dxhat += dxh;
            sum_dxhat_xhat += dxh * xh[c];
          }
          const double is = (*inv_std)[r];
          for (int c = 0; c < C; ++c) {
            const double dxh = gy[c] * pg->value[c];
            px->grad[r * C + c] +=
                is * (dxh - sum_dxhat / C - xh[c] * sum_dxhat_xhat / C);
          }
        }
      }
    };
  }
  return Tensor(n);
}

Tensor im2col(const Tensor& x, int kernel, int stride, int padding) {
  detail::require(x.rank() == 2, "im2col: expects [L x C_in]");
  if (kernel < 1 || stride < 1 || padding < 0)
    throw ConfigError("im2col: kernel/stride must be >= 1, padding >= 0");
  const int L = x.dim(0), Cin = x.dim(1);
  const int Lp = (L + 2 * padding - kernel) / stride + 1;
  if (L + 2 * padding < kernel || Lp < 1)
    throw ConfigError("im2col: degenerate output length for L=" +
                      std::to_string(L) + ", kernel=" + std::to_string(kernel) +
                      ", stride=" + std::to_string(stride) +
                      ", padding=" + std::to_string(padding));
  auto n = detail::make_node({Lp, kernel * Cin}, {x.node()});
  n->value.assign(static_cast<size_t>(Lp) * kernel * Cin, 0.0);
  const auto& xv = x.node()->value;
  for (int t = 0; t < Lp; ++t) {
    for (int k = 0; k < kernel; ++k) {
      const int src = t * stride + k - padding;
      if (src < 0 || src >= L) continue;  // zero padding
      std::memcpy(n->value.data() + (static_cast<size_t>(t) * kernel + k) * Cin,
                  xv.data() + static_cast<size_t>(src) * Cin,
                  static_cast<size_t>(Cin) * sizeof(double));
    }
  }
  if (n->requires_grad) {
    auto px = x.node();
    n->backward_fn = [px, kernel, stride, padding, L, Cin, Lp](Node& self) {
      detail::ensure_grad(*px);
      for (int t = 0; t < Lp; ++t) {
        for (int k = 0; k < kernel; ++k) {
          const int src = t * stride + k - padding;
          if (src < 0 || src >= L) continue;
          const double* g =
              self.grad.data() + (static_cast<size_t>(t) * kernel + k) * Cin;
          double* o = px->grad.data() + static_cast<size_t>(src) * Cin;
          for (int c = 0; c < Cin; ++c) o[c] += g[c];
        }
      }
    };
  }
  return Tensor(n);
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride,
              int padding) {
  detail::require(w.rank() == 3, "conv1d: weight must be [K x C_in x C_out]");
  const int K = w.dim(0), Cin = w.dim(1), Cout = w.dim(2);
  detail::require(x.rank() == 2 && x.dim(1) == Cin,
                  "conv1d: input " + shape_str(x.shape()) +
                      " incompatible with weight " + shape_str(w.shape()));
  detail::require(bias.numel() == Cout, "conv1d: bias must have length " +
                                            std::to_string(Cout));
  Tensor cols = im2col(x, K, stride, padding);
  Tensor wmat = reshape(w, {K * Cin, Cout});
  return add_rowvec(matmul(cols, wmat), bias);
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                        double eps, std::vector<double>* batch_mean,
                        std::vector<double>* batch_var) {
  detail::require(x.rank() == 2, "batch_norm: expects [R x C]");
  const int R = x.dim(0), C = x.dim(1);
  detail::require(gamma.numel() == C && beta.numel() == C,
                  "batch_norm: affine parameters must have length " +
                      std::to_string(C));
  const auto& xv = x.node()->value;
  std::vector<double> mean(C, 0.0), var(C, 0.0);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) mean[c] += xv[static_cast<size_t>(r) * C + c];
  for (int c = 0; c < C; ++c) mean[c] /= R;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const double d = xv[static_cast<size_t>(r) * C + c] - mean[c];
      var[c] += d * d;
    }
  for (int c = 0; c < C; ++c) var[c] /= R;  // biased, as used for normalization
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;

  auto n = detail::make_node(x.shape(), {x.node(), gamma.node(), beta.node()});
  n->value.resize(xv.size());
  auto xhat = std::make_shared<std::vector<double>>(xv.size());
  auto inv_std = std::make_shared<std::vector<double>>(C);
  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  for (int c = 0; c < C; ++c) (*inv_std)[c] = 1.0 / std::sqrt(var[c] + eps);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const size_t k = static_cast<size_t>(r) * C + c;
      const double xh = (xv[k] - mean[c]) * (*inv_std)[c];
      (*xhat)[k] = xh;
      n->value[k] = gv[c] * xh + bv[c];
    }
  detail::check_finite(*n, "batch_norm");
  if (n->requires_grad) {
    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    n->backward_fn = [px, pg, pb, xhat, inv_std, R, C](Node& self) {
      std::vector<double> sum_dxhat(C, 0.0), sum_dxhat_xhat(C, 0.0);
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
          const size_t k = static_cast<size_t>(r) * C + c;
          const double dxh = self.grad[k] * pg->value[c];
          sum_dxhat[c] += dxh;
          sum_dxhat_xhat[c] += dxh * (*xhat)[k];
        }
      if (pg->requires_grad) {
        detail::ensure_grad(*pg);
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < C; ++c) {
            const size_t k = static_cast<size_t>(r) * C + c;
            pg->grad[c] += self.grad[k] * (*xhat)[k];
          }
      }
      if (pb->requires_grad) {
        detail::ensure_grad(*pb);
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < C; ++c)
            pb->grad[c] += self.grad[static_cast<size_t>(r) * C + c];
      }
      if (px->requires_grad) {
        detail::ensure_grad(*px);
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < C; ++c) {
            const size_t k = static_cast<size_t>(r) * C + c;
            const double dxh = self.grad[k] * pg->value[c];
            px->grad[k] += (*inv_std)[c] *
                           (dxh - sum_dxhat[c] / R -
                            (*xhat)[k] * sum_dxhat_xhat[c] / R);
          }
      }
    };
  }
  return Tensor(n);
}

Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       const std::vector<double>& running_mean,
                       const std::vector<double>& running_var, double eps) {
  detail::require(x.rank() == 2, "batch_norm: expects [R x C]");
  const int R = x.dim(0), C = x.dim(1);
  detail::require(gamma.numel() == C && beta.numel() == C &&
                      static_cast<int>(running_mean.size()) == C &&
                      static_cast<int>(running_var.size()) == C,
                  "batch_norm: parameter width mismatch");
  auto n = detail::make_node(x.shape(), {x.node(), gamma.node(), beta.node()});
  const auto& xv = x.node()->value;
  const auto& gv = gamma.node()->value;
  const auto& bv = beta.node()->value;
  n->value.resize(xv.size());
  std::vector<double> inv_std(C);
  for (int c = 0; c < C; ++c) inv_std[c] = 1.0 / std::sqrt(running_var[c] + eps);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      const size_t k = static_cast<size_t>(r) * C + c;
      n->value[k] = gv[c] * (xv[k] - running_mean[c]) * inv_std[c] + bv[c];
    }
  detail::check_finite(*n, "batch_norm_eval");
  if (n->requires_grad) {
    auto px = x.node();
    auto pg = gamma.node();
    auto pb = beta.node();
    auto mean = running_mean;
    n->backward_fn = [px, pg, pb, inv_std, mean, R, C](Node& self) {
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) {
          const size_t k = static_cast<size_t>(r) * C + c;
          const double xh = (px->value[k] - mean[c]) * inv_std[c];
          if (px->requires_grad) {
            detail::ensure_grad(*px);
            px->grad[k] += self.grad[k] * pg->value[c] * inv_std[c];
          }
          if (pg->requires_grad) {
            detail::ensure_grad(*pg);
            pg->grad[c] += self.grad[k] * xh;
          }
          if (pb->requires_grad) {
            detail::ensure_grad(*pb);
            pb->grad[c] += self.grad[k];
          }
        }
    };
  }
  return Tensor(n);
}

// ---- reductions and losses --------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  auto n = detail::make_node({1}, {a.node()});
  double s = 0.0;
  for (double v : a.node()->value) s += v;
  n->value = {s};
  detail::check_finite(*n, "sum_all");
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa](Node& self) {
      detail::ensure_grad(*pa);
      for (auto& g : pa->grad) g += self.grad[0];
    };
  }
  return Tensor(n);
}

Tensor mean_all(const Tensor& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor gap_rows(const Tensor& a) {
  detail::require(a.rank() == 2, "gap_rows: expects [R x C]");
  const int R = a.dim(0), C = a.dim(1);
  auto n = detail::make_node({1, C}, {a.node()});
  n->value.assign(static_cast<size_t>(C), 0.0);
  const auto& av = a.node()->value;
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c)
      n->value[static_cast<size_t>(c)] += av[static_cast<size_t>(r) * C + c];
  for (int c = 0; c < C; ++c) n->value[static_cast<size_t>(c)] /= R;
  if (n->requires_grad) {
    auto pa = a.node();
    n->backward_fn = [pa, R, C](Node& self) {
      detail::ensure_grad(*pa);
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c)
          pa->grad[static_cast<size_t>(r) * C + c] += self.grad[c] / R;
    };
  }
  return Tensor(n);
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  Tensor d = sub(pred, target);
  return mean_all(mul(d, d));
}

Tensor softmax_cross_entropy(const Tensor& logits,
                             const std::vector<int>& labels) {
  detail::require(logits.rank() == 2, "softmax_cross_entropy: expects [B x K]");
  const int B = logits.dim(0), K = logits.dim(1);
  if (static_cast<int>(labels.size()) != B)
    throw ShapeError("softmax_cross_entropy: label count mismatch");
  for (int y : labels)
    if (y < 0 || y >= K)
      throw ShapeError("softmax_cross_entropy: label out of range");

  auto n = detail::make_node({1}, {logits.node()});
  const auto& lv = logits.node()->value;
  auto probs = std::make_shared<std::vector<double>>(lv.size());
  double loss = 0.0;
  for (int b = 0; b < B; ++b) {
    const double* row = lv.data() + static_cast<size_t>(b) * K;
    double mx = row[0];
    for (int k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double sum = 0.0;
    for (int k = 0; k < K; ++k) sum += std::exp(row[k] - mx);
    const double lse = mx + std::log(sum);
    loss += lse - row[labels[static_cast<size_t>(b)]];
    for (int k = 0; k < K; ++k)
      (*probs)[static_cast<size_t>(b) * K + k] = std::exp(row[k] - lse);
  }
  n->value = {loss / B};
  detail::check_finite(*n, "softmax_cross_entropy");
  if (n->requires_grad) {
    auto pl = logits.node();
    n->backward_fn = [pl, probs, labels, B, K](Node& self) {
      detail::ensure_grad(*pl);
      const double g = self.grad[0] / B;
      for (int b = 0; b < B; ++b)
        for (int k = 0; k < K; ++k) {
          const size_t i = static_cast<size_t>(b) * K + k;
          const double onehot = (k == labels[static_cast<size_t>(b)]) ? 1.0 : 0.0;
          pl->grad[i] += g * ((*probs)[i] - onehot);
        }
    };
  }
  return Tensor(n);
}

// ---- verification harness -----------------------------------------------------------

double grad_check(const std::function<Tensor(const Tensor&)>& f,
                  const Tensor& theta, double h) {
  if (!(h >= 1e-6 && h <= 1e-4))
    throw ConfigError("grad_check: h must lie in [1e-6, 1e-4]");
  std::vector<double> data(theta.data().begin(), theta.data().end());
  Tensor p = parameter(theta.shape(), data);
  Tensor y = f(p);
  if (y.numel() != 1) throw ShapeError("grad_check: f must return a scalar");
  y.backward();
  std::vector<double> analytic(data.size(), 0.0);
  if (p.has_grad()) {
    auto g = p.grad();
    analytic.assign(g.begin(), g.end());
  }

  Tensor probe = constant(theta.shape(), data);
  auto pd = probe.mutable_data();
  double max_rel = 0.0;
  for (size_t i = 0; i < data.size(); ++i) {
    const double x0 = pd[i];
    pd[i] = x0 + h;
    const double fp = f(probe).item();
    pd[i] = x0 - h;
    const double fm = f(probe).item();
    pd[i] = x0;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw NumericError("grad_check: non-finite function value at probe " +
                         std::to_string(i));
    const double numeric = (fp - fm) / (2.0 * h);
    const double rel = std::abs(analytic[i] - numeric) /
                       std::max(1.0, std::abs(analytic[i]));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

double grad_check_params(const std::function<Tensor()>& loss,
                         std::span<const Tensor> params, double h) {
  if (!(h >= 1e-6 && h <= 1e-4))
    throw ConfigError("grad_check_params: h must lie in [1e-6, 1e-4]");
  for (auto p : params) const_cast<Tensor&>(p).zero_grad();
  Tensor y = loss();
  if (y.numel() != 1)
    throw ShapeError("grad_check_params: loss must be scalar");
  y.backward();
  std::vector<std::vector<double>> analytic;
  for (const auto& p : params) {
    if (p.has_grad()) {
      auto g = p.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(static_cast<size_t>(p.numel()), 0.0);
    }
  }
  double max_rel = 0.0;
  for (size_t k = 0; k < params.size(); ++k) {
    Tensor p = params[k];
    auto pd = p.mutable_data();
    for (size_t i = 0; i < pd.size(); ++i) {
      const double x0 = pd[i];
      pd[i] = x0 + h;
      const double fp = loss().item();
      pd[i] = x0 - h;
      const double fm = loss().item();
      pd[i] = x0;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw NumericError("grad_check_params: non-finite probe value");
      const double numeric = (fp - fm) / (2.0 * h);
      const double rel = std::abs(analytic[k][i] - numeric) /
                         std::max(1.0, std::abs(analytic[k][i]));
      max_rel = std::max(max_rel, rel);
    }
    p.zero_grad();
  }
  return max_rel;
}

}  // namespace hola
