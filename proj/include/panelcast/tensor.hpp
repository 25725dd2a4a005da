#pragma once

// Dense 64-bit tensors with tape-based reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Every differentiable
// primitive records its inputs and a local-gradient rule on the node it
// produces; backward() rebuilds the tape reachable from the loss and replays
// it in reverse creation order.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace panelcast {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

inline std::uint64_t next_sequence() {
  static std::atomic<std::uint64_t> counter{0};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed
  bool requires_grad = false;
  std::uint64_t sequence = next_sequence();
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> local_gradient;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (numel_of(shape) != values.size()) {
      throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                       std::to_string(values.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const auto n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor(Shape{}, {value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<const double> data() const { return node_->data; }
  // Writable view; only meaningful for leaves (parameters, inputs).
  std::span<double> mutable_data() { return node_->data; }
  std::vector<double> to_vector() const { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return !node_->local_gradient; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
  }

  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
  }

  double at(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (auto i : index) {
      if (i >= node_->shape[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
      flat = flat * node_->shape[axis] + i;
      ++axis;
    }
    return node_->data[flat];
  }

  // Same values, no history; the copy owns its storage.
  Tensor detach() const { return Tensor(shape(), to_vector()); }

  detail::Node& node() const { return *node_; }
  const std::shared_ptr<detail::Node>& handle() const { return node_; }

 private:
  friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                            std::function<void(detail::Node&)>);
  std::shared_ptr<detail::Node> node_;
};

// Builds an op output. The gradient rule is dropped when no input needs one.
inline Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                          std::function<void(detail::Node&)> rule) {
  Tensor out(std::move(shape), std::move(values));
  const bool needs = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (needs) {
    auto& node = out.node();
    node.requires_grad = true;
    node.inputs.reserve(inputs.size());
    for (auto& in : inputs) node.inputs.push_back(in.handle());
    node.local_gradient = std::move(rule);
  }
  return out;
}

// Ordered record of the differentiable operations that produced a tensor.
// Entries are in creation order, which is a topological order of the graph.
class ComputationTape {
 public:
  static ComputationTape record(const Tensor& root) {
    ComputationTape tape;
    std::unordered_set<const detail::Node*> seen;
    std::vector<detail::Node*> stack{&root.node()};
    while (!stack.empty()) {
      auto* n = stack.back();
      stack.pop_back();
      if (!n->requires_grad || !seen.insert(n).second) continue;
      tape.entries_.push_back(n);
      for (auto& in : n->inputs) stack.push_back(in.get());
    }
    std::sort(tape.entries_.begin(), tape.entries_.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->sequence < b->sequence; });
    return tape;
  }

  std::span<detail::Node* const> entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Seeds d(root)/d(root) = 1 and applies local rules last-to-first.
  void replay_reverse() const {
    if (entries_.empty()) return;
    for (auto* n : entries_) {
      if (n->local_gradient) n->grad.assign(n->data.size(), 0.0);
    }
    auto* root = entries_.back();
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
      if ((*it)->local_gradient) (*it)->local_gradient(**it);
    }
  }

 private:
  std::vector<detail::Node*> entries_;
};

// Leaf gradients accumulate across calls; zero them between steps.
inline void backward(const Tensor& loss) {
  if (!loss.defined()) throw std::invalid_argument("backward on undefined tensor");
  if (loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw std::logic_error("backward on a detached tensor: no recorded operations require grad");
  }
  ComputationTape::record(loss).replay_reverse();
}

namespace detail {

inline std::vector<double>& grad_of(const std::shared_ptr<Node>& n) {
  n->ensure_grad();
  return n->grad;
}

// b broadcasts against a when b's shape equals a trailing suffix of a's shape
// (bias add) or b holds a single element (scalar scale).
enum class Broadcast { same, suffix, scalar };

inline Broadcast broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Broadcast::same;
  if (b.numel() == 1) return Broadcast::scalar;
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  if (sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin())) return Broadcast::suffix;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(sb) + " onto " + shape_str(sa));
}

template <typename Fwd, typename DA, typename DB>
Tensor binary(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  const auto kind = broadcast_kind(a, b, name);
  const std::size_t n = a.numel();
  const std::size_t m = b.numel();
  auto av = a.data();
  auto bv = b.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(av[i], bv[kind == Broadcast::same ? i : i % m]);
  return make_result(a.shape(), std::move(out), {a, b}, [kind, n, m, da, db](Node& self) {
    auto& an = self.inputs[0];
    auto& bn = self.inputs[1];
    const auto& g = self.grad;
    if (an->requires_grad) {
      auto& ga = grad_of(an);
      for (std::size_t i = 0; i < n; ++i) {
        const double bi = bn->data[kind == Broadcast::same ? i : i % m];
        ga[i] += g[i] * da(an->data[i], bi);
      }
    }
    if (bn->requires_grad) {
      auto& gb = grad_of(bn);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = kind == Broadcast::same ? i : i % m;
        gb[j] += g[i] * db(an->data[i], bn->data[j]);
      }
    }
  });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  return make_result(a.shape(), std::move(out), {a}, [deriv](Node& self) {
    auto& in = self.inputs[0];
    auto& gi = grad_of(in);
    for (std::size_t i = 0; i < self.grad.size(); ++i) {
      gi[i] += self.grad[i] * deriv(in->data[i], self.data[i]);
    }
  });
}

inline std::size_t check_axis(const Tensor& x, std::ptrdiff_t axis, const char* op) {
  const auto r = static_cast<std::ptrdiff_t>(x.rank());
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) {
    throw std::out_of_range(std::string(op) + ": invalid axis " + std::to_string(axis) + " for " +
                            shape_str(x.shape()));
  }
  return static_cast<std::size_t>(axis);
}

// Splits a shape around one axis into (outer, axis length, inner) extents.
struct AxisSplit {
  std::size_t outer = 1, length = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.length = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

inline Tensor scale(const Tensor& a, double factor) {
  return detail::unary(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

inline Tensor add_scalar(const Tensor& a, double offset) {
  return detail::unary(
      a, [offset](double x) { return x + offset; }, [](double, double) { return 1.0; });
}

// 1 - x, used by gated recurrences.
inline Tensor one_minus(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return 1.0 - x; }, [](double, double) { return -1.0; });
}

inline Tensor square(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0 ? x : 0.0; }, [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor log1p(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > -1.0)) throw DomainError("log1p: argument " + std::to_string(v) + " is not > -1");
  }
  return detail::unary(
      a, [](double x) { return std::log1p(x); }, [](double x, double) { return 1.0 / (1.0 + x); });
}

inline Tensor expm1(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::expm1(x); }, [](double, double y) { return y + 1.0; });
}

// ---- shape manipulation ----------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel_of(shape) != a.numel()) {
    throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  }
  return make_result(std::move(shape), a.to_vector(), {a}, [](detail::Node& self) {
    auto& gi = detail::grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += self.grad[i];
  });
}

// Swaps the last two axes of a rank-2 or rank-3 tensor.
inline Tensor transpose_last(const Tensor& a) {
  if (a.rank() != 2 && a.rank() != 3) throw ShapeError("transpose_last: rank must be 2 or 3");
  const std::size_t batch = a.rank() == 3 ? a.dim(0) : 1;
  const std::size_t rows = a.dim(a.rank() - 2);
  const std::size_t cols = a.dim(a.rank() - 1);
  Shape out_shape = a.shape();
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  auto av = a.data();
  std::vector<double> out(a.numel());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) out[b * rows * cols + c * rows + r] = av[b * rows * cols + r * cols + c];
  return make_result(std::move(out_shape), std::move(out), {a}, [batch, rows, cols](detail::Node& self) {
    auto& gi = detail::grad_of(self.inputs[0]);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c)
          gi[b * rows * cols + r * cols + c] += self.grad[b * rows * cols + c * rows + r];
  });
}

inline Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis_in) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t axis = detail::check_axis(parts.front(), axis_in, "concat");
  Shape out_shape = parts.front().shape();
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    if (p.rank() != out_shape.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t d = 0; d < p.rank(); ++d) {
      if (d != axis && p.dim(d) != out_shape[d]) {
        throw ShapeError("concat: " + shape_str(p.shape()) + " incompatible with " + shape_str(parts.front().shape()));
      }
    }
    out_shape[axis] += p.dim(axis);
  }
  const auto split = detail::split_at(out_shape, axis);
  std::vector<double> out(numel_of(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t len = p.dim(axis);
    auto pv = p.data();
    for (std::size_t o = 0; o < split.outer; ++o)
      std::copy_n(pv.begin() + static_cast<std::ptrdiff_t>(o * len * split.inner), len * split.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * split.length + offset) * split.inner));
    offset += len;
  }
  return make_result(std::move(out_shape), std::move(out), parts, [split, offsets, axis](detail::Node& self) {
    for (std::size_t k = 0; k < self.inputs.size(); ++k) {
      auto& in = self.inputs[k];
      if (!in->requires_grad) continue;
      auto& gi = detail::grad_of(in);
      const std::size_t len = in->shape[axis];
      for (std::size_t o = 0; o < split.outer; ++o)
        for (std::size_t j = 0; j < len * split.inner; ++j)
          gi[o * len * split.inner + j] += self.grad[(o * split.length + offsets[k]) * split.inner + j];
    }
  });
}

// Keeps indices [start, start+length) along one axis.
inline Tensor slice(const Tensor& a, std::ptrdiff_t axis_in, std::size_t start, std::size_t length) {
  const std::size_t axis = detail::check_axis(a, axis_in, "slice");
  if (start + length > a.dim(axis)) {
    throw ShapeError("slice: [" + std::to_string(start) + "," + std::to_string(start + length) + ") exceeds " +
                     shape_str(a.shape()));
  }
  const auto split = detail::split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(numel_of(out_shape));
  auto av = a.data();
  for (std::size_t o = 0; o < split.outer; ++o)
    std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((o * split.length + start) * split.inner), length * split.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * split.inner));
  return make_result(std::move(out_shape), std::move(out), {a}, [split, start, length](detail::Node& self) {
    auto& gi = detail::grad_of(self.inputs[0]);
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t j = 0; j < length * split.inner; ++j)
        gi[(o * split.length + start) * split.inner + j] += self.grad[o * length * split.inner + j];
  });
}

// Inserts a new axis of extent n and repeats the tensor along it.
inline Tensor repeat_new_axis(const Tensor& a, std::ptrdiff_t axis_in, std::size_t n) {
  const auto r = static_cast<std::ptrdiff_t>(a.rank());
  if (axis_in < 0) axis_in += r + 1;
  if (axis_in < 0 || axis_in > r) throw std::out_of_range("repeat_new_axis: invalid axis");
  const auto axis = static_cast<std::size_t>(axis_in);
  Shape out_shape = a.shape();
  out_shape.insert(out_shape.begin() + axis_in, n);
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis; i < a.rank(); ++i) inner *= a.dim(i);
  auto av = a.data();
  std::vector<double> out(numel_of(out_shape));
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      std::copy_n(av.begin() + static_cast<std::ptrdiff_t>(o * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * n + k) * inner));
  return make_result(std::move(out_shape), std::move(out), {a}, [outer, inner, n](detail::Node& self) {
    auto& gi = detail::grad_of(self.inputs[0]);
    for (std::size_t o = 0; o < outer; ++o)
      for (std::size_t k = 0; k < n; ++k)
        for (std::size_t j = 0; j < inner; ++j) gi[o * inner + j] += self.grad[(o * n + k) * inner + j];
  });
}

// Row gather from a [rows x cols] table; gradients scatter-add to touched rows.
inline Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  if (table.rank() != 2) throw ShapeError("gather_rows: table must be rank 2");
  const std::size_t rows = table.dim(0);
  const std::size_t cols = table.dim(1);
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  for (auto id : idx) {
    if (id >= rows) {
      throw std::out_of_range("gather_rows: id " + std::to_string(id) + " outside [0, " + std::to_string(rows) + ")");
    }
  }
  auto tv = table.data();
  std::vector<double> out(idx.size() * cols);
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy_n(tv.begin() + static_cast<std::ptrdiff_t>(idx[r] * cols), cols,
                out.begin() + static_cast<std::ptrdiff_t>(r * cols));
  return make_result({idx.size(), cols}, std::move(out), {table}, [idx, cols](detail::Node& self) {
    auto& gi = detail::grad_of(self.inputs[0]);
    for (std::size_t r = 0; r < idx.size(); ++r)
      for (std::size_t c = 0; c < cols; ++c) gi[idx[r] * cols + c] += self.grad[r * cols + c];
  });
}

// ---- linear algebra --------------------------------------------------------

namespace detail {

// out[m x n] += a[m x k] * b[k x n]
inline void gemm_acc(const double* a, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      double* orow = out + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
}

// out[m x k] += g[m x n] * b^T  where b is [k x n]
inline void gemm_acc_bt(const double* g, const double* b, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      double s = 0.0;
      const double* grow = g + i * n;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) s += grow[j] * brow[j];
      out[i * k + p] += s;
    }
}

// out[k x n] += a^T * g  where a is [m x k], g is [m x n]
inline void gemm_acc_at(const double* a, const double* g, double* out, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[i * k + p];
      if (av == 0.0) continue;
      const double* grow = g + i * n;
      double* orow = out + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * grow[j];
    }
}

}  // namespace detail

// Supports [m x k]*[k x n], batched [b x m x k]*[b x k x n], and
// [b x m x k]*[k x n] (shared right operand, e.g. a dense layer over time).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto mismatch = [&] {
    return ShapeError("matmul: shape mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  };
  std::size_t batch = 1, m = 0, k = 0, n = 0;
  bool shared_b = false;
  Shape out_shape;
  if (a.rank() == 2 && b.rank() == 2) {
    m = a.dim(0), k = a.dim(1), n = b.dim(1);
    if (b.dim(0) != k) throw mismatch();
    out_shape = {m, n};
  } else if (a.rank() == 3 && b.rank() == 3) {
    batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
    if (b.dim(0) != batch || b.dim(1) != k) throw mismatch();
    out_shape = {batch, m, n};
  } else if (a.rank() == 3 && b.rank() == 2) {
    // Fold the batch into rows.
    m = a.dim(0) * a.dim(1), k = a.dim(2), n = b.dim(1);
    if (b.dim(0) != k) throw mismatch();
    shared_b = true;
    out_shape = {a.dim(0), a.dim(1), n};
  } else {
    throw mismatch();
  }
  std::vector<double> out(numel_of(out_shape), 0.0);
  const double* ap = a.data().data();
  const double* bp = b.data().data();
  for (std::size_t s = 0; s < batch; ++s) detail::gemm_acc(ap + s * m * k, bp + s * k * n, out.data() + s * m * n, m, k, n);
  return make_result(std::move(out_shape), std::move(out), {a, b}, [batch, m, k, n, shared_b](detail::Node& self) {
    auto& an = self.inputs[0];
    auto& bn = self.inputs[1];
    const double* g = self.grad.data();
    for (std::size_t s = 0; s < batch; ++s) {
      if (an->requires_grad)
        detail::gemm_acc_bt(g + s * m * n, bn->data.data() + (shared_b ? 0 : s * k * n),
                            detail::grad_of(an).data() + s * m * k, m, k, n);
      if (bn->requires_grad)
        detail::gemm_acc_at(an->data.data() + s * m * k, g + s * m * n,
                            detail::grad_of(bn).data() + (shared_b ? 0 : s * k * n), m, k, n);
    }
  });
}

// ---- reductions and normalization -----------------------------------------

enum class Reduction { sum, mean };

inline Tensor reduce(const Tensor& x, Reduction kind, std::ptrdiff_t axis_in) {
  const std::size_t axis = detail::check_axis(x, axis_in, "reduce");
  const auto split = detail::split_at(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  const double factor = kind == Reduction::mean ? 1.0 / static_cast<double>(split.length) : 1.0;
  auto xv = x.data();
  std::vector<double> out(split.outer * split.inner, 0.0);
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t l = 0; l < split.length; ++l)
      for (std::size_t i = 0; i < split.inner; ++i)
        out[o * split.inner + i] += xv[(o * split.length + l) * split.inner + i];
  for (auto& v : out) v *= factor;
  return make_result(std::move(out_shape), std::move(out), {x}, [split, factor](detail::Node& self) {
    auto& gi = detail::grad_of(self.inputs[0]);
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t l = 0; l < split.length; ++l)
        for (std::size_t i = 0; i < split.inner; ++i)
          gi[(o * split.length + l) * split.inner + i] += factor * self.grad[o * split.inner + i];
  });
}

// Reduces over every element to a rank-0 tensor.
inline Tensor reduce_all(const Tensor& x, Reduction kind) {
  const std::size_t n = x.numel();
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double factor = (kind == Reduction::mean && n > 0) ? 1.0 / static_cast<double>(n) : 1.0;
  return make_result(Shape{}, {total * factor}, {x}, [factor](detail::Node& self) {
    auto& gi = detail::grad_of(self.inputs[0]);
    for (auto& g : gi) g += factor * self.grad[0];
  });
}

inline Tensor sum(const Tensor& x) { return reduce_all(x, Reduction::sum); }
inline Tensor mean(const Tensor& x) { return reduce_all(x, Reduction::mean); }

// Max-subtracted softmax along one axis.
inline Tensor softmax(const Tensor& x, std::ptrdiff_t axis_in) {
  const std::size_t axis = detail::check_axis(x, axis_in, "softmax");
  const auto split = detail::split_at(x.shape(), axis);
  auto xv = x.data();
  std::vector<double> out(x.numel());
  for (std::size_t o = 0; o < split.outer; ++o)
    for (std::size_t i = 0; i < split.inner; ++i) {
      const auto at = [&](std::size_t l) { return (o * split.length + l) * split.inner + i; };
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t l = 0; l < split.length; ++l) mx = std::max(mx, xv[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < split.length; ++l) z += (out[at(l)] = std::exp(xv[at(l)] - mx));
      for (std::size_t l = 0; l < split.length; ++l) out[at(l)] /= z;
    }
  return make_result(x.shape(), std::move(out), {x}, [split](detail::Node& self) {
    auto& gi = detail::grad_of(self.inputs[0]);
    for (std::size_t o = 0; o < split.outer; ++o)
      for (std::size_t i = 0; i < split.inner; ++i) {
        const auto at = [&](std::size_t l) { return (o * split.length + l) * split.inner + i; };
        double dot = 0.0;
        for (std::size_t l = 0; l < split.length; ++l) dot += self.grad[at(l)] * self.data[at(l)];
        for (std::size_t l = 0; l < split.length; ++l) gi[at(l)] += self.data[at(l)] * (self.grad[at(l)] - dot);
      }
  });
}

// Zero-mean, unit-variance over the last axis (biased variance, eps inside sqrt).
inline Tensor standardize_last(const Tensor& x, double eps) {
  if (x.rank() == 0) throw ShapeError("standardize_last: needs rank >= 1");
  const std::size_t d = x.dim(x.rank() - 1);
  const std::size_t rows = d ? x.numel() / d : 0;
  auto xv = x.data();
  std::vector<double> out(x.numel());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = (row[j] - mu) * inv_std[r];
  }
  return make_result(x.shape(), std::move(out), {x}, [d, rows, inv_std](detail::Node& self) {
    auto& gi = detail::grad_of(self.inputs[0]);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* g = self.grad.data() + r * d;
      const double* y = self.data.data() + r * d;
      double gsum = 0.0, gysum = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        gsum += g[j];
        gysum += g[j] * y[j];
      }
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t j = 0; j < d; ++j)
        gi[r * d + j] += inv_std[r] * (g[j] - inv_d * gsum - y[j] * inv_d * gysum);
    }
  });
}

// ---- gradient checking -----------------------------------------------------

// Relative discrepancy between an analytic and a central-difference
// derivative. The 1e-5 floor keeps rounding noise on structurally zero
// derivatives (about eps * |f| / h, so 1e-10 for f near 10 at h = 1e-5) from
// reading as a large relative error.
inline double gradient_error(double analytic, double central) {
  return std::abs(analytic - central) / std::max({std::abs(analytic), std::abs(central), 1e-5});
}

// Max over coordinates of gradient_error(autodiff, central difference).
// The function is evaluated with `x` replaced by perturbed copies; x itself is
// left untouched.
inline double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf(x.shape(), x.to_vector(), true);
  const Tensor y = f(leaf);
  backward(y);
  const std::vector<double> analytic(leaf.grad().begin(), leaf.grad().end());
  double worst = 0.0;
  auto base = x.to_vector();
  for (std::size_t i = 0; i < base.size(); ++i) {
    auto plus = base;
    auto minus = base;
    plus[i] += h;
    minus[i] -= h;
    const double fp = f(Tensor(x.shape(), std::move(plus))).item();
    const double fm = f(Tensor(x.shape(), std::move(minus))).item();
    const double central = (fp - fm) / (2.0 * h);
    worst = std::max(worst, gradient_error(analytic[i], central));
  }
  return worst;
}

// Same discrepancy measure over a set of parameter leaves that `loss` closes
// over. Parameters are perturbed in place and restored.
inline double finite_diff_check(const std::function<Tensor()>& loss, std::span<Tensor> params, double h) {
  for (auto& p : params) p.zero_grad();
  backward(loss());
  double worst = 0.0;
  for (auto& p : params) {
    const std::vector<double> analytic(p.grad().begin(), p.grad().end());
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double fp = loss().item();
      values[i] = saved - h;
      const double fm = loss().item();
      values[i] = saved;
      const double central = (fp - fm) / (2.0 * h);
      worst = std::max(worst, gradient_error(analytic[i], central));
    }
  }
  return worst;
}

}  // namespace panelcast
