#pragma once

// Differentiable building blocks shared by the forecasting models.

#include <cmath>
#include <concepts>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "panelcast/random.hpp"
#include "panelcast/tensor.hpp"

namespace panelcast {

using NamedParameters = std::vector<std::pair<std::string, Tensor>>;

// Glorot-uniform initialised trainable matrix.
inline Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(rows + cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> v(rows * cols);
  for (auto& x : v) x = dist(rng);
  return Tensor({rows, cols}, std::move(v), true);
}

enum class Activation { identity, tanh, relu };

inline Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::tanh: return panelcast::tanh(x);
    case Activation::relu: return panelcast::relu(x);
    case Activation::identity: break;
  }
  return x;
}

class DenseLayer {
 public:
  DenseLayer() = default;
  DenseLayer(std::size_t in, std::size_t out, Activation act, Rng& rng)
      : weight_(glorot(in, out, rng)), bias_(Tensor::zeros({out}, true)), act_(act) {}

  // x is [b x in] or [b x t x in].
  Tensor operator()(const Tensor& x) const {
    if (x.rank() < 2 || x.dim(x.rank() - 1) != in_dim()) {
      throw ShapeError("dense: input " + shape_str(x.shape()) + " does not end in " + std::to_string(in_dim()));
    }
    return activate(add(matmul(x, weight_), bias_), act_);
  }

  std::size_t in_dim() const { return weight_.dim(0); }
  std::size_t out_dim() const { return weight_.dim(1); }
  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  Activation activation() const { return act_; }

  void collect(NamedParameters& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".weight", weight_);
    out.emplace_back(prefix + ".bias", bias_);
  }

 private:
  Tensor weight_;
  Tensor bias_;
  Activation act_ = Activation::identity;
};

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::size_t vocabulary, std::size_t dim, Rng& rng) {
    std::normal_distribution<double> dist(0.0, 0.1);
    std::vector<double> v(vocabulary * dim);
    for (auto& x : v) x = dist(rng);
    table_ = Tensor({vocabulary, dim}, std::move(v), true);
  }

  Tensor lookup(std::span<const std::size_t> ids) const {
    for (auto id : ids) {
      if (id >= vocabulary()) {
        throw std::out_of_range("embedding id " + std::to_string(id) + " outside vocabulary of " +
                                std::to_string(vocabulary()));
      }
    }
    return gather_rows(table_, ids);
  }

  std::size_t vocabulary() const { return table_.dim(0); }
  std::size_t dim() const { return table_.dim(1); }
  Tensor& table() { return table_; }

  void collect(NamedParameters& out, const std::string& prefix) const { out.emplace_back(prefix + ".table", table_); }

 private:
  Tensor table_;
};

// A recurrent cell maps (input [b x in], state [b x hidden]) to a new state.
template <typename C>
concept RecurrentCell = requires(const C& cell, const Tensor& x, NamedParameters& out) {
  { cell.step(x, x) } -> std::same_as<Tensor>;
  { cell.input_dim() } -> std::convertible_to<std::size_t>;
  { cell.hidden_dim() } -> std::convertible_to<std::size_t>;
  cell.collect(out, std::string{});
};

// Gated recurrent unit:
//   z  = sigmoid(x Wz + h Uz + bz)
//   r  = sigmoid(x Wr + h Ur + br)
//   h~ = tanh(x Wh + (r * h) Uh + bh)
//   h' = (1 - z) * h + z * h~
class GruCell {
 public:
  GruCell() = default;
  GruCell(std::size_t in, std::size_t hidden, Rng& rng)
      : wz_(glorot(in, hidden, rng)),
        wr_(glorot(in, hidden, rng)),
        wh_(glorot(in, hidden, rng)),
        uz_(glorot(hidden, hidden, rng)),
        ur_(glorot(hidden, hidden, rng)),
        uh_(glorot(hidden, hidden, rng)),
        bz_(Tensor::zeros({hidden}, true)),
        br_(Tensor::zeros({hidden}, true)),
        bh_(Tensor::zeros({hidden}, true)) {}

  Tensor step(const Tensor& x, const Tensor& h) const {
    if (x.rank() != 2 || x.dim(1) != input_dim() || h.rank() != 2 || h.dim(1) != hidden_dim() ||
        x.dim(0) != h.dim(0)) {
      throw ShapeError("gru step: input " + shape_str(x.shape()) + ", state " + shape_str(h.shape()) +
                       " for cell " + std::to_string(input_dim()) + "->" + std::to_string(hidden_dim()));
    }
    // With no input features the x-projections vanish.
    const auto xproj = [&](const Tensor& w) {
      return input_dim() == 0 ? Tensor::zeros({x.dim(0), hidden_dim()}) : matmul(x, w);
    };
    const Tensor z = sigmoid(add(add(xproj(wz_), matmul(h, uz_)), bz_));
    const Tensor r = sigmoid(add(add(xproj(wr_), matmul(h, ur_)), br_));
    const Tensor cand = panelcast::tanh(add(add(xproj(wh_), matmul(mul(r, h), uh_)), bh_));
    return add(mul(one_minus(z), h), mul(z, cand));
  }

  std::size_t input_dim() const { return wz_.dim(0); }
  std::size_t hidden_dim() const { return uz_.dim(0); }

  // Gate order: z, r, h.
  Tensor& input_weight(char gate) { return pick(gate, wz_, wr_, wh_); }
  Tensor& state_weight(char gate) { return pick(gate, uz_, ur_, uh_); }
  Tensor& bias(char gate) { return pick(gate, bz_, br_, bh_); }

  void collect(NamedParameters& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".w_z", wz_);
    out.emplace_back(prefix + ".w_r", wr_);
    out.emplace_back(prefix + ".w_h", wh_);
    out.emplace_back(prefix + ".u_z", uz_);
    out.emplace_back(prefix + ".u_r", ur_);
    out.emplace_back(prefix + ".u_h", uh_);
    out.emplace_back(prefix + ".b_z", bz_);
    out.emplace_back(prefix + ".b_r", br_);
    out.emplace_back(prefix + ".b_h", bh_);
  }

 private:
  static Tensor& pick(char gate, Tensor& z, Tensor& r, Tensor& h) {
    switch (gate) {
      case 'z': return z;
      case 'r': return r;
      case 'h': return h;
      default: throw std::invalid_argument(std::string("unknown GRU gate '") + gate + "'");
    }
  }

  Tensor wz_, wr_, wh_, uz_, ur_, uh_, bz_, br_, bh_;
};

static_assert(RecurrentCell<GruCell>);

// Additive causal mask: 0 on and below the diagonal, -1e9 above it.
inline Tensor causal_mask(std::size_t t) {
  std::vector<double> m(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i)
    for (std::size_t j = i + 1; j < t; ++j) m[i * t + j] = -1e9;
  return Tensor({t, t}, std::move(m));
}

// softmax(Q K^T / sqrt(d_K)) V over [b x t x d] operands.
inline Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v, bool causal = false) {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || q.dim(0) != k.dim(0) || k.dim(0) != v.dim(0) ||
      q.dim(2) != k.dim(2) || k.dim(1) != v.dim(1)) {
    throw ShapeError("attention: incompatible Q " + shape_str(q.shape()) + ", K " + shape_str(k.shape()) + ", V " +
                     shape_str(v.shape()));
  }
  if (causal && q.dim(1) != k.dim(1)) {
    throw ShapeError("attention: causal mask needs equal query/key lengths, got " + std::to_string(q.dim(1)) +
                     " and " + std::to_string(k.dim(1)));
  }
  const double d_k = static_cast<double>(q.dim(2));
  Tensor scores = scale(matmul(q, transpose_last(k)), 1.0 / std::sqrt(d_k));
  if (causal) scores = add(scores, causal_mask(q.dim(1)));
  return matmul(softmax(scores, 2), v);
}

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d_model, std::size_t heads, Rng& rng) : heads_(heads) {
    if (heads == 0 || d_model % heads != 0) {
      throw std::invalid_argument("multi-head attention: d_model " + std::to_string(d_model) +
                                  " not divisible by " + std::to_string(heads) + " heads");
    }
    wq_ = DenseLayer(d_model, d_model, Activation::identity, rng);
    wk_ = DenseLayer(d_model, d_model, Activation::identity, rng);
    wv_ = DenseLayer(d_model, d_model, Activation::identity, rng);
    wo_ = DenseLayer(d_model, d_model, Activation::identity, rng);
  }

  Tensor operator()(const Tensor& query_in, const Tensor& kv_in, bool causal) const {
    const Tensor q = wq_(query_in);
    const Tensor k = wk_(kv_in);
    const Tensor v = wv_(kv_in);
    const std::size_t d_head = d_model() / heads_;
    std::vector<Tensor> outs;
    outs.reserve(heads_);
    for (std::size_t h = 0; h < heads_; ++h) {
      outs.push_back(scaled_dot_product_attention(slice(q, 2, h * d_head, d_head), slice(k, 2, h * d_head, d_head),
                                                  slice(v, 2, h * d_head, d_head), causal));
    }
    return wo_(heads_ == 1 ? outs.front() : concat(outs, 2));
  }

  std::size_t d_model() const { return wq_.in_dim(); }
  std::size_t heads() const { return heads_; }
  DenseLayer& query() { return wq_; }
  DenseLayer& key() { return wk_; }
  DenseLayer& value() { return wv_; }
  DenseLayer& output() { return wo_; }

  void collect(NamedParameters& out, const std::string& prefix) const {
    wq_.collect(out, prefix + ".q");
    wk_.collect(out, prefix + ".k");
    wv_.collect(out, prefix + ".v");
    wo_.collect(out, prefix + ".o");
  }

 private:
  std::size_t heads_ = 1;
  DenseLayer wq_, wk_, wv_, wo_;
};

class LayerNorm {
 public:
  static constexpr double kEpsilon = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t d) : gain_(Tensor::full({d}, 1.0, true)), bias_(Tensor::zeros({d}, true)) {}

  Tensor operator()(const Tensor& x) const { return add(mul(standardize_last(x, kEpsilon), gain_), bias_); }

  Tensor& gain() { return gain_; }
  Tensor& bias() { return bias_; }

  void collect(NamedParameters& out, const std::string& prefix) const {
    out.emplace_back(prefix + ".gain", gain_);
    out.emplace_back(prefix + ".bias", bias_);
  }

 private:
  Tensor gain_, bias_;
};

// Sinusoidal table: PE(t, 2i) = sin(t / 10000^(2i/d)), PE(t, 2i+1) = cos(...).
inline Tensor positional_encoding(std::size_t t_max, std::size_t d_model) {
  if (d_model % 2 != 0) throw std::invalid_argument("positional encoding needs even d_model, got " + std::to_string(d_model));
  std::vector<double> pe(t_max * d_model);
  for (std::size_t t = 0; t < t_max; ++t)
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle =
          static_cast<double>(t) / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d_model));
      pe[t * d_model + 2 * i] = std::sin(angle);
      pe[t * d_model + 2 * i + 1] = std::cos(angle);
    }
  return Tensor({t_max, d_model}, std::move(pe));
}

}  // namespace panelcast
