#pragma once

// Dense reverse-mode differentiable computation graph.
//
// A Tensor is a shared handle to a graph node holding a row-major buffer of
// doubles. Operators build new nodes and, when any input requires a gradient,
// attach a closure that pushes the output gradient back into the inputs.
// backward() walks the graph in reverse topological order from a scalar root.
//
// Every operator checks its output for NaN/Inf and throws NumericFault naming
// the operator; backward() does the same for gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <unordered_set>
#include <utility>
#include <vector>

#include "canoe/error.hpp"

namespace canoe::dcg {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != 0) {
      out += ", ";
    }
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Exponent arguments are clamped to this range everywhere in the library.
inline constexpr double kExpClamp = 50.0;

struct Node;
using BackwardFn = std::function<void(const Node& out)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) {
      grad.assign(value.size(), 0.0);
    }
    return grad;
  }
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor constant(Shape shape, std::vector<double> values) {
    require(numel(shape) == values.size(), "Tensor: shape does not match value count");
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
  }

  static Tensor parameter(Shape shape, std::vector<double> values) {
    Tensor t = constant(std::move(shape), std::move(values));
    t.node_->requires_grad = true;
    return t;
  }

  static Tensor zeros(Shape shape) {
    const std::size_t n = numel(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
  }

  static Tensor scalar(double v) { return constant({1}, {v}); }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  // Negative axes count from the end.
  std::size_t dim(std::ptrdiff_t axis) const {
    const auto r = static_cast<std::ptrdiff_t>(rank());
    const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
    require(a >= 0 && a < r, "Tensor::dim: axis out of range");
    return node_->shape[static_cast<std::size_t>(a)];
  }

  std::span<const double> values() const { return node_->value; }
  // Direct write access for optimizers and finite-difference probes.
  std::span<double> mutable_values() const { return node_->value; }

  double item() const {
    require(size() == 1, "Tensor::item: tensor is not a scalar");
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() const { return node_->grad; }
  void zero_grad() const { node_->grad.assign(size(), 0.0); }
  void clear_grad() const { node_->grad.clear(); }

  const char* op() const { return node_->op; }
  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& handle() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

inline bool all_finite(std::span<const double> xs) {
  return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

// Builds an operator node. The backward closure is kept only if some parent
// needs a gradient; closures should capture parent Node pointers, which stay
// alive through the parents list.
inline Tensor make_op(const char* op, Shape shape, std::vector<double> value,
                      const std::vector<Tensor>& parents, BackwardFn backward) {
  if (!all_finite(value)) {
    throw NumericFault(std::string("non-finite value produced by ") + op);
  }
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  const bool needs_grad = std::any_of(parents.begin(), parents.end(),
                                      [](const Tensor& p) { return p.requires_grad(); });
  if (needs_grad) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (const auto& p : parents) {
      node->parents.push_back(p.handle());
    }
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

// Reverse pass from a scalar root. Leaf gradients accumulate; gradients of
// intermediate nodes are reset at the start of every pass.
inline void backward(const Tensor& root) {
  require(root.defined() && root.size() == 1, "backward: root must be a scalar tensor");
  Node* r = root.node();
  if (!r->requires_grad) {
    return;
  }

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{r, 0}};
  seen.insert(r);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) {
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    if (n->backward) {
      n->grad.assign(n->value.size(), 0.0);
    }
  }
  r->grad_buffer()[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) {
      continue;
    }
    if (!all_finite(n->grad)) {
      throw NumericFault(std::string("non-finite gradient reaching ") + n->op);
    }
    n->backward(*n);
  }
  for (Node* n : order) {
    if (!n->backward && !all_finite(n->grad)) {
      throw NumericFault("non-finite gradient on a leaf tensor");
    }
  }
}

namespace detail {

inline Shape broadcast_shape(const Shape& a, const Shape& b, const char* op) {
  const std::size_t r = std::max(a.size(), b.size());
  Shape out(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    const std::size_t da = i < r - a.size() ? 1 : a[i - (r - a.size())];
    const std::size_t db = i < r - b.size() ? 1 : b[i - (r - b.size())];
    if (da != db && da != 1 && db != 1) {
      throw ContractViolation(std::string(op) + ": shapes " + shape_string(a) + " and " +
                              shape_string(b) + " do not broadcast");
    }
    out[i] = std::max(da, db);
  }
  return out;
}

// Flat source index for each output element of a broadcast.
inline std::vector<std::size_t> broadcast_index(const Shape& src, const Shape& out) {
  const std::size_t r = out.size();
  std::vector<std::size_t> stride(r, 0);
  std::size_t s = 1;
  for (std::size_t i = r; i-- > 0;) {
    const std::size_t off = r - src.size();
    const std::size_t d = i < off ? 1 : src[i - off];
    stride[i] = d == 1 ? 0 : s;
    s *= d;
  }
  const std::size_t n = numel(out);
  std::vector<std::size_t> index(n);
  std::vector<std::size_t> counter(r, 0);
  std::size_t flat = 0;
  for (std::size_t k = 0; k < n; ++k) {
    index[k] = flat;
    for (std::size_t i = r; i-- > 0;) {
      ++counter[i];
      flat += stride[i];
      if (counter[i] < out[i]) {
        break;
      }
      flat -= stride[i] * counter[i];
      counter[i] = 0;
    }
  }
  return index;
}

// f(x, y) with partials dfx(x, y, z), dfy(x, y, z) where z = f(x, y).
template <class F, class Dx, class Dy>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, F f, Dx dfx, Dy dfy) {
  Shape out_shape = a.shape() == b.shape() ? a.shape() : broadcast_shape(a.shape(), b.shape(), op);
  const std::size_t n = numel(out_shape);
  const bool same_a = a.shape() == out_shape;
  const bool same_b = b.shape() == out_shape;
  auto ia = std::make_shared<std::vector<std::size_t>>();
  auto ib = std::make_shared<std::vector<std::size_t>>();
  if (!same_a) {
    *ia = broadcast_index(a.shape(), out_shape);
  }
  if (!same_b) {
    *ib = broadcast_index(b.shape(), out_shape);
  }
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) {
    out[k] = f(av[same_a ? k : (*ia)[k]], bv[same_b ? k : (*ib)[k]]);
  }
  Node* pa = a.node();
  Node* pb = b.node();
  return make_op(op, std::move(out_shape), std::move(out), {a, b},
                 [=](const Node& o) {
                   const auto& g = o.grad;
                   const auto& av2 = pa->value;
                   const auto& bv2 = pb->value;
                   if (pa->requires_grad) {
                     auto& ga = pa->grad_buffer();
                     for (std::size_t k = 0; k < g.size(); ++k) {
                       const std::size_t i = same_a ? k : (*ia)[k];
                       const std::size_t j = same_b ? k : (*ib)[k];
                       ga[i] += g[k] * dfx(av2[i], bv2[j], o.value[k]);
                     }
                   }
                   if (pb->requires_grad) {
                     auto& gb = pb->grad_buffer();
                     for (std::size_t k = 0; k < g.size(); ++k) {
                       const std::size_t i = same_a ? k : (*ia)[k];
                       const std::size_t j = same_b ? k : (*ib)[k];
                       gb[j] += g[k] * dfy(av2[i], bv2[j], o.value[k]);
                     }
                   }
                 });
}

// f(x) with derivative df(x, y) where y = f(x).
template <class F, class D>
Tensor unary(const char* op, const Tensor& x, F f, D df) {
  const auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t k = 0; k < xv.size(); ++k) {
    out[k] = f(xv[k]);
  }
  Node* px = x.node();
  return make_op(op, x.shape(), std::move(out), {x}, [=](const Node& o) {
    auto& gx = px->grad_buffer();
    for (std::size_t k = 0; k < o.grad.size(); ++k) {
      gx[k] += o.grad[k] * df(px->value[k], o.value[k]);
    }
  });
}

// C(n x m) += A(n x k) * B(k x m)
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) {
        continue;
      }
      const double* brow = b + p * m;
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        crow[j] += aip * brow[j];
      }
    }
  }
}

// C(n x m) += A(n x k) * B(m x k)^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t n, std::size_t k,
                    std::size_t m) {
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[i * k + p] * b[j * k + p];
      }
      c[i * m + j] += acc;
    }
  }
}

// C(n x m) += A(k x n)^T * B(k x m)
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t k, std::size_t n,
                    std::size_t m) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t i = 0; i < n; ++i) {
      const double api = a[p * n + i];
      if (api == 0.0) {
        continue;
      }
      const double* brow = b + p * m;
      double* crow = c + i * m;
      for (std::size_t j = 0; j < m; ++j) {
        crow[j] += api * brow[j];
      }
    }
  }
}

// Splits a shape around `axis` into (outer, axis length, inner).
inline std::tuple<std::size_t, std::size_t, std::size_t> split_axis(const Shape& shape,
                                                                    std::size_t axis) {
  std::size_t outer = 1;
  std::size_t inner = 1;
  for (std::size_t i = 0; i < axis; ++i) {
    outer *= shape[i];
  }
  for (std::size_t i = axis + 1; i < shape.size(); ++i) {
    inner *= shape[i];
  }
  return {outer, shape[axis], inner};
}

inline std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const char* op) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ContractViolation(std::string(op) + ": axis out of range");
  }
  return static_cast<std::size_t>(a);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(
      "scale", x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(
      "add_scalar", x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      "square", x, [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// Subgradient at 0 is 0.
inline Tensor relu(const Tensor& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

// e^clamp(x, -50, 50); zero derivative outside the clamp range.
inline Tensor exp(const Tensor& x) {
  return detail::unary(
      "exp", x, [](double v) { return std::exp(std::clamp(v, -kExpClamp, kExpClamp)); },
      [](double v, double y) { return (v < -kExpClamp || v > kExpClamp) ? 0.0 : y; });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor clamp(const Tensor& x, double lo, double hi) {
  require(lo <= hi, "clamp: lo > hi");
  return detail::unary(
      "clamp", x, [=](double v) { return std::clamp(v, lo, hi); },
      [=](double v, double) { return (v < lo || v > hi) ? 0.0 : 1.0; });
}

// Gradient-free copy.
inline Tensor detach(const Tensor& x) {
  return Tensor::constant(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

// a: [..., n, k]. b: [k, m] shared across the leading dims of a, or a tensor
// with the same leading dims as a. With transpose_b, b holds [.., m, k] and
// the product is a * b^T.
inline Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  require(a.rank() >= 2 && b.rank() >= 2, "matmul: operands must have rank >= 2");
  const std::size_t n = a.dim(-2);
  const std::size_t k = a.dim(-1);
  const std::size_t bk = transpose_b ? b.dim(-1) : b.dim(-2);
  const std::size_t m = transpose_b ? b.dim(-2) : b.dim(-1);
  if (bk != k) {
    throw ContractViolation("matmul: inner dimensions differ: " + shape_string(a.shape()) +
                            " x " + shape_string(b.shape()));
  }
  const bool shared_b = b.rank() == 2;
  if (!shared_b) {
    const bool same_batch = b.rank() == a.rank() &&
                            std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin());
    require(same_batch, "matmul: batch dimensions differ");
  }
  const std::size_t batch = a.size() / (n * k);
  Shape out_shape = a.shape();
  out_shape.back() = m;
  std::vector<double> out(batch * n * m, 0.0);
  const double* av = a.values().data();
  const double* bv = b.values().data();
  const std::size_t b_stride = shared_b ? 0 : k * m;
  for (std::size_t s = 0; s < batch; ++s) {
    if (transpose_b) {
      detail::gemm_nt(av + s * n * k, bv + s * b_stride, out.data() + s * n * m, n, k, m);
    } else {
      detail::gemm_nn(av + s * n * k, bv + s * b_stride, out.data() + s * n * m, n, k, m);
    }
  }
  Node* pa = a.node();
  Node* pb = b.node();
  return make_op("matmul", std::move(out_shape), std::move(out), {a, b}, [=](const Node& o) {
    const double* g = o.grad.data();
    if (pa->requires_grad) {
      double* ga = pa->grad_buffer().data();
      const double* bw = pb->value.data();
      for (std::size_t s = 0; s < batch; ++s) {
        if (transpose_b) {
          detail::gemm_nn(g + s * n * m, bw + s * b_stride, ga + s * n * k, n, m, k);
        } else {
          detail::gemm_nt(g + s * n * m, bw + s * b_stride, ga + s * n * k, n, m, k);
        }
      }
    }
    if (pb->requires_grad) {
      double* gb = pb->grad_buffer().data();
      const double* aw = pa->value.data();
      for (std::size_t s = 0; s < batch; ++s) {
        if (transpose_b) {
          detail::gemm_tn(g + s * n * m, aw + s * n * k, gb + s * b_stride, n, m, k);
        } else {
          detail::gemm_tn(aw + s * n * k, g + s * n * m, gb + s * b_stride, n, k, m);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.values()) {
    total += v;
  }
  Node* px = x.node();
  return make_op("sum", {1}, {total}, {x}, [px](const Node& o) {
    auto& gx = px->grad_buffer();
    for (double& g : gx) {
      g += o.grad[0];
    }
  });
}

inline Tensor mean(const Tensor& x) {
  require(x.size() > 0, "mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

// Sum over the last axis, keeping it with length 1.
inline Tensor sum_last(const Tensor& x) {
  const std::size_t cols = x.dim(-1);
  const std::size_t rows = x.size() / cols;
  std::vector<double> out(rows, 0.0);
  const auto xv = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      out[r] += xv[r * cols + c];
    }
  }
  Shape shape = x.shape();
  shape.back() = 1;
  Node* px = x.node();
  return make_op("sum_last", std::move(shape), std::move(out), {x}, [=](const Node& o) {
    auto& gx = px->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += o.grad[r];
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

// Softmax over the last axis. With `causal`, entry j of row i (i indexing the
// second-to-last axis) gets probability 0 for j > i.
inline Tensor softmax(const Tensor& x, bool causal = false) {
  const std::size_t cols = x.dim(-1);
  const std::size_t rows = x.size() / cols;
  const std::size_t rows_per_matrix = x.rank() >= 2 ? x.dim(-2) : 1;
  if (causal) {
    require(x.rank() >= 2 && rows_per_matrix == cols, "softmax: causal mask needs square scores");
  }
  const auto xv = x.values();
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t limit = causal ? (r % rows_per_matrix) + 1 : cols;
    const double* in = xv.data() + r * cols;
    double* y = out.data() + r * cols;
    const double mx = *std::max_element(in, in + limit);
    double z = 0.0;
    for (std::size_t c = 0; c < limit; ++c) {
      y[c] = std::exp(in[c] - mx);
      z += y[c];
    }
    for (std::size_t c = 0; c < limit; ++c) {
      y[c] /= z;
    }
  }
  Node* px = x.node();
  return make_op("softmax", x.shape(), std::move(out), {x}, [=](const Node& o) {
    auto& gx = px->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.value.data() + r * cols;
      const double* g = o.grad.data() + r * cols;
      double dot = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        dot += y[c] * g[c];
      }
      for (std::size_t c = 0; c < cols; ++c) {
        gx[r * cols + c] += y[c] * (g[c] - dot);
      }
    }
  });
}

inline Tensor log_softmax(const Tensor& x) {
  const std::size_t cols = x.dim(-1);
  const std::size_t rows = x.size() / cols;
  const auto xv = x.values();
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      z += std::exp(in[c] - mx);
    }
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < cols; ++c) {
      out[r * cols + c] = in[c] - lz;
    }
  }
  Node* px = x.node();
  return make_op("log_softmax", x.shape(), std::move(out), {x}, [=](const Node& o) {
    auto& gx = px->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      double gsum = 0.0;
      for (std::size_t c = 0; c < cols; ++c) {
        gsum += o.grad[r * cols + c];
      }
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t i = r * cols + c;
        gx[i] += o.grad[i] - std::exp(o.value[i]) * gsum;
      }
    }
  });
}

// Mean negative log-probability of `targets` under softmax(logits) row-wise.
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets) {
  require(logits.rank() == 2, "cross_entropy: logits must be [rows, classes]");
  const std::size_t rows = logits.dim(0);
  const std::size_t cols = logits.dim(1);
  require(rows > 0 && targets.size() == rows, "cross_entropy: one target per row required");
  for (std::size_t t : targets) {
    require(t < cols, "cross_entropy: target index out of range");
  }
  const auto xv = logits.values();
  auto probs = std::make_shared<std::vector<double>>(logits.size());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    const double mx = *std::max_element(in, in + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      (*probs)[r * cols + c] = std::exp(in[c] - mx);
      z += (*probs)[r * cols + c];
    }
    for (std::size_t c = 0; c < cols; ++c) {
      (*probs)[r * cols + c] /= z;
    }
    total -= in[targets[r]] - mx - std::log(z);
  }
  auto tgt = std::make_shared<std::vector<std::size_t>>(targets.begin(), targets.end());
  Node* px = logits.node();
  return make_op("cross_entropy", {1}, {total / static_cast<double>(rows)}, {logits},
                 [=](const Node& o) {
                   auto& gx = px->grad_buffer();
                   const double g = o.grad[0] / static_cast<double>(rows);
                   for (std::size_t r = 0; r < rows; ++r) {
                     for (std::size_t c = 0; c < cols; ++c) {
                       const double onehot = c == (*tgt)[r] ? 1.0 : 0.0;
                       gx[r * cols + c] += g * ((*probs)[r * cols + c] - onehot);
                     }
                   }
                 });
}

// Layer normalization over the last axis with affine gain and bias.
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                         double eps = 1e-5) {
  const std::size_t cols = x.dim(-1);
  require(gain.size() == cols && bias.size() == cols, "layer_norm: affine size mismatch");
  const std::size_t rows = x.size() / cols;
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  auto xhat = std::make_shared<std::vector<double>>(x.size());
  auto inv_std = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      mu += in[c];
    }
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      var += (in[c] - mu) * (in[c] - mu);
    }
    var /= static_cast<double>(cols);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const double h = (in[c] - mu) * is;
      (*xhat)[r * cols + c] = h;
      out[r * cols + c] = gv[c] * h + bv[c];
    }
  }
  Node* px = x.node();
  Node* pg = gain.node();
  Node* pb = bias.node();
  return make_op("layer_norm", x.shape(), std::move(out), {x, gain, bias}, [=](const Node& o) {
    const auto& g = o.grad;
    if (pg->requires_grad || pb->requires_grad) {
      auto& gg = pg->grad_buffer();
      auto& gb = pb->grad_buffer();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) {
          gg[c] += g[r * cols + c] * (*xhat)[r * cols + c];
          gb[c] += g[r * cols + c];
        }
      }
    }
    if (px->requires_grad) {
      auto& gx = px->grad_buffer();
      const auto& gv2 = pg->value;
      const double inv_n = 1.0 / static_cast<double>(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_d = 0.0;
        double mean_dh = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = g[r * cols + c] * gv2[c];
          mean_d += d;
          mean_dh += d * (*xhat)[r * cols + c];
        }
        mean_d *= inv_n;
        mean_dh *= inv_n;
        for (std::size_t c = 0; c < cols; ++c) {
          const double d = g[r * cols + c] * gv2[c];
          gx[r * cols + c] += (*inv_std)[r] * (d - mean_d - (*xhat)[r * cols + c] * mean_dh);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: element count changes");
  Node* px = x.node();
  return make_op("reshape", std::move(shape),
                 std::vector<double>(x.values().begin(), x.values().end()), {x},
                 [px](const Node& o) {
                   auto& gx = px->grad_buffer();
                   for (std::size_t k = 0; k < gx.size(); ++k) {
                     gx[k] += o.grad[k];
                   }
                 });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis = -1) {
  require(!parts.empty(), "concat: no inputs");
  const std::size_t r = parts[0].rank();
  const std::size_t ax = detail::normalize_axis(axis, r, "concat");
  Shape out_shape = parts[0].shape();
  out_shape[ax] = 0;
  for (const auto& p : parts) {
    bool ok = p.rank() == r;
    for (std::size_t i = 0; ok && i < r; ++i) {
      ok = i == ax || p.shape()[i] == parts[0].shape()[i];
    }
    if (!ok) {
      throw ContractViolation("concat: incompatible shapes " + shape_string(parts[0].shape()) +
                              " and " + shape_string(p.shape()));
    }
    out_shape[ax] += p.shape()[ax];
  }
  const auto [outer, total, inner] = detail::split_axis(out_shape, ax);
  std::vector<double> out(numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.shape()[ax];
    const auto pv = p.values();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(pv.data() + o * len * inner, len * inner,
                  out.data() + (o * total + offset) * inner);
    }
    offset += len;
  }
  std::vector<Node*> nodes;
  std::vector<std::size_t> lens;
  for (const auto& p : parts) {
    nodes.push_back(p.node());
    lens.push_back(p.shape()[ax]);
  }
  return make_op("concat", std::move(out_shape), std::move(out), parts, [=](const Node& o) {
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (!nodes[i]->requires_grad) {
        continue;
      }
      auto& g = nodes[i]->grad_buffer();
      for (std::size_t q = 0; q < outer; ++q) {
        const double* src = o.grad.data() + (q * total + offsets[i]) * inner;
        double* dst = g.data() + q * lens[i] * inner;
        for (std::size_t k = 0; k < lens[i] * inner; ++k) {
          dst[k] += src[k];
        }
      }
    }
  });
}

// Elements [begin, end) along `axis`.
inline Tensor slice(const Tensor& x, std::ptrdiff_t axis, std::size_t begin, std::size_t end) {
  const std::size_t ax = detail::normalize_axis(axis, x.rank(), "slice");
  require(begin < end && end <= x.shape()[ax], "slice: bad range");
  const auto [outer, len, inner] = detail::split_axis(x.shape(), ax);
  const std::size_t width = end - begin;
  Shape out_shape = x.shape();
  out_shape[ax] = width;
  std::vector<double> out(outer * width * inner);
  const auto xv = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(xv.data() + (o * len + begin) * inner, width * inner,
                out.data() + o * width * inner);
  }
  Node* px = x.node();
  return make_op("slice", std::move(out_shape), std::move(out), {x}, [=](const Node& node) {
    auto& g = px->grad_buffer();
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = node.grad.data() + o * width * inner;
      double* dst = g.data() + (o * len + begin) * inner;
      for (std::size_t k = 0; k < width * inner; ++k) {
        dst[k] += src[k];
      }
    }
  });
}

// Rows of a [count, d] table; gradients scatter-add back into the table.
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> indices) {
  require(table.rank() == 2, "gather_rows: table must be rank 2");
  const std::size_t count = table.dim(0);
  const std::size_t d = table.dim(1);
  for (std::size_t i : indices) {
    if (i >= count) {
      throw ContractViolation("gather_rows: index " + std::to_string(i) + " out of range for " +
                              std::to_string(count) + " rows");
    }
  }
  std::vector<double> out(indices.size() * d);
  const auto tv = table.values();
  for (std::size_t r = 0; r < indices.size(); ++r) {
    std::copy_n(tv.data() + indices[r] * d, d, out.data() + r * d);
  }
  auto idx = std::make_shared<std::vector<std::size_t>>(indices.begin(), indices.end());
  Node* pt = table.node();
  return make_op("gather_rows", {indices.size(), d}, std::move(out), {table},
                 [=](const Node& o) {
                   auto& g = pt->grad_buffer();
                   for (std::size_t r = 0; r < idx->size(); ++r) {
                     for (std::size_t c = 0; c < d; ++c) {
                       g[(*idx)[r] * d + c] += o.grad[r * d + c];
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// Parameter registry
// ---------------------------------------------------------------------------

// Named learnable tensors in insertion order.
class ParamRegistry {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values) {
    if (index_.count(name) != 0) {
      throw ContractViolation("ParamRegistry: duplicate parameter name '" + name + "'");
    }
    Tensor t = Tensor::parameter(std::move(shape), std::move(values));
    index_.emplace(name, entries_.size());
    entries_.emplace_back(name, t);
    return t;
  }

  Tensor get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
      throw ContractViolation("ParamRegistry: unknown parameter '" + name + "'");
    }
    return entries_[it->second].second;
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  std::size_t size() const { return entries_.size(); }

  std::size_t total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) {
      n += t.size();
    }
    return n;
  }

  void zero_grad() const {
    for (const auto& [name, t] : entries_) {
      t.zero_grad();
    }
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

}  // namespace canoe::dcg
