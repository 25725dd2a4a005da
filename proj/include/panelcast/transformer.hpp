#pragma once

// Regression transformer: an encoder over the history window and a causal
// decoder over the right-shifted target sequence, with the output softmax
// replaced by a linear head. Static features are concatenated onto every
// time position of both stacks. Blocks are post-norm.

#include <algorithm>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "panelcast/layers.hpp"
#include "panelcast/model.hpp"

namespace panelcast {

struct EncoderBlock {
  MultiHeadAttention attention;
  LayerNorm norm1, norm2;
  DenseLayer ff1, ff2;

  EncoderBlock() = default;
  EncoderBlock(std::size_t d_model, std::size_t heads, std::size_t ff_dim, Rng& rng)
      : attention(d_model, heads, rng),
        norm1(d_model),
        norm2(d_model),
        ff1(d_model, ff_dim, Activation::relu, rng),
        ff2(ff_dim, d_model, Activation::identity, rng) {}

  Tensor operator()(const Tensor& x) const {
    const Tensor a = norm1(add(x, attention(x, x, false)));
    return norm2(add(a, ff2(ff1(a))));
  }

  void collect(NamedParameters& out, const std::string& prefix) const {
    attention.collect(out, prefix + ".attn");
    norm1.collect(out, prefix + ".norm1");
    norm2.collect(out, prefix + ".norm2");
    ff1.collect(out, prefix + ".ff1");
    ff2.collect(out, prefix + ".ff2");
  }
};

struct DecoderBlock {
  MultiHeadAttention self_attention, cross_attention;
  LayerNorm norm1, norm2, norm3;
  DenseLayer ff1, ff2;

  DecoderBlock() = default;
  DecoderBlock(std::size_t d_model, std::size_t heads, std::size_t ff_dim, Rng& rng)
      : self_attention(d_model, heads, rng),
        cross_attention(d_model, heads, rng),
        norm1(d_model),
        norm2(d_model),
        norm3(d_model),
        ff1(d_model, ff_dim, Activation::relu, rng),
        ff2(ff_dim, d_model, Activation::identity, rng) {}

  Tensor operator()(const Tensor& y, const Tensor& memory) const {
    const Tensor a = norm1(add(y, self_attention(y, y, true)));
    const Tensor c = norm2(add(a, cross_attention(a, memory, false)));
    return norm3(add(c, ff2(ff1(c))));
  }

  void collect(NamedParameters& out, const std::string& prefix) const {
    self_attention.collect(out, prefix + ".self");
    cross_attention.collect(out, prefix + ".cross");
    norm1.collect(out, prefix + ".norm1");
    norm2.collect(out, prefix + ".norm2");
    norm3.collect(out, prefix + ".norm3");
    ff1.collect(out, prefix + ".ff1");
    ff2.collect(out, prefix + ".ff2");
  }
};

class TransformerModel {
 public:
  static constexpr std::string_view magic() { return "PCTF"; }

  TransformerModel(ModelConfig cfg, ModelInputs inputs, std::uint64_t seed) : cfg_(std::move(cfg)), inputs_(inputs) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t e = cfg_.embed_dim;
    const std::size_t d = cfg_.d_model;
    store_embedding_ = EmbeddingTable(inputs_.store_vocab, e, rng);
    item_embedding_ = EmbeddingTable(inputs_.item_vocab, e, rng);
    encoder_in_ = DenseLayer(inputs_.encoder_channels + static_width(), d, Activation::identity, rng);
    decoder_in_ = DenseLayer(decoder_channels() + static_width(), d, Activation::identity, rng);
    for (std::size_t k = 0; k < cfg_.blocks; ++k) encoder_.emplace_back(d, cfg_.heads, cfg_.ff_dim, rng);
    for (std::size_t k = 0; k < cfg_.blocks; ++k) decoder_.emplace_back(d, cfg_.heads, cfg_.ff_dim, rng);
    head_ = DenseLayer(d, 1, Activation::identity, rng);
    pe_ = positional_encoding(std::max(cfg_.history_cap, cfg_.horizon), d);
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  const ModelInputs& inputs() const { return inputs_; }

  // History length requested from the data pipeline, never above the cap.
  std::size_t history_for(std::size_t anchor) const {
    return std::min(cfg_.history_len.capped(cfg_.history_cap).resolve(anchor), anchor + 1);
  }

  std::size_t static_width() const { return 2 * cfg_.embed_dim + inputs_.static_dim; }
  std::size_t decoder_channels() const { return 1 + (cfg_.future_covariates ? inputs_.future_dim : 0); }

  Tensor static_vector(const WindowBatch& batch) const {
    return concat({store_embedding_.lookup(batch.store_index), item_embedding_.lookup(batch.item_index),
                   batch.static_features},
                  1);
  }

  // x_seq already carries the static columns on every position.
  Tensor encode(const Tensor& x_seq) const {
    if (x_seq.rank() != 3) throw ShapeError("transformer encode: expected rank 3, got " + shape_str(x_seq.shape()));
    const std::size_t t = x_seq.dim(1);
    if (t == 0) throw std::invalid_argument("transformer encode: empty history");
    if (t > cfg_.history_cap) {
      throw std::invalid_argument("transformer encode: history of " + std::to_string(t) + " days exceeds cap " +
                                  std::to_string(cfg_.history_cap));
    }
    Tensor h = add(encoder_in_(x_seq), position(t));
    for (const auto& block : encoder_) h = block(h);
    return h;
  }

  // One causal pass over `y_in` [b x L x decoder_channels + static]; returns [b x L].
  Tensor decode_prefix(const Tensor& memory, const Tensor& y_in) const {
    const std::size_t b = y_in.dim(0);
    const std::size_t len = y_in.dim(1);
    if (len == 0 || len > pe_.dim(0)) throw ShapeError("transformer decode: bad decoder length " + std::to_string(len));
    Tensor h = add(decoder_in_(y_in), position(len));
    for (const auto& block : decoder_) h = block(h, memory);
    return reshape(head_(h), {b, len});
  }

  // Decoder input from a right-shifted log-sales sequence [b x L x 1].
  Tensor decoder_input(const Tensor& y_shifted, const Tensor& static_vec, const Tensor& future = {}) const {
    const std::size_t len = y_shifted.dim(1);
    std::vector<Tensor> parts{y_shifted};
    if (cfg_.future_covariates && inputs_.future_dim > 0) parts.push_back(slice(future, 1, 0, len));
    parts.push_back(repeat_new_axis(static_vec, 1, len));
    return concat(parts, 2);
  }

  Tensor decode_teacher_forced(const Tensor& memory, const Tensor& y_shifted, const Tensor& static_vec,
                               const Tensor& future = {}) const {
    if (y_shifted.rank() != 3 || y_shifted.dim(2) != 1) {
      throw ShapeError("decode_teacher_forced: y_shifted must be [b x L x 1], got " + shape_str(y_shifted.shape()));
    }
    if (y_shifted.dim(1) != cfg_.horizon) {
      throw ShapeError("decode_teacher_forced: expected horizon " + std::to_string(cfg_.horizon) + ", got " +
                       std::to_string(y_shifted.dim(1)));
    }
    return decode_prefix(memory, decoder_input(y_shifted, static_vec, future));
  }

  // H sequential passes; pass t sees the go value and predictions 1..t-1.
  Tensor infer_autoregressive(const Tensor& memory, const Tensor& static_vec, const Tensor& future = {},
                              std::size_t horizon = 0) const {
    if (horizon == 0) horizon = cfg_.horizon;
    const std::size_t b = memory.dim(0);
    std::vector<double> shifted(b * horizon, 0.0);
    std::vector<double> out(b * horizon, 0.0);
    for (std::size_t t = 0; t < horizon; ++t) {
      std::vector<double> prefix(b * (t + 1));
      for (std::size_t r = 0; r < b; ++r)
        for (std::size_t k = 0; k <= t; ++k) prefix[r * (t + 1) + k] = shifted[r * horizon + k];
      const Tensor y = decode_prefix(memory.detach(), decoder_input(Tensor({b, t + 1, 1}, std::move(prefix)), static_vec.detach(),
                                                                    future.defined() ? future.detach() : future));
      for (std::size_t r = 0; r < b; ++r) {
        const double v = y.at({r, t});
        out[r * horizon + t] = v;
        if (t + 1 < horizon) shifted[r * horizon + t + 1] = v;
      }
    }
    return Tensor({b, horizon}, std::move(out));
  }

  Tensor encoder_input(const WindowBatch& batch, const Tensor& static_vec) const {
    return concat({batch.encoder, repeat_new_axis(static_vec, 1, batch.history())}, 2);
  }

  // Train mode is one teacher-forced pass on the batch targets; infer mode is autoregressive.
  Tensor forward(const WindowBatch& batch, ForwardMode mode = ForwardMode::train) const {
    const Tensor s = static_vector(batch);
    const Tensor memory = encode(encoder_input(batch, s));
    if (mode == ForwardMode::infer) return infer_autoregressive(memory, s, batch.future, batch.horizon());
    return decode_teacher_forced(memory, shift_right(batch.targets), s, batch.future);
  }

  // [b x H] -> [b x H x 1] with a leading zero and the last value dropped.
  static Tensor shift_right(const Tensor& y) {
    const std::size_t b = y.dim(0);
    const std::size_t h = y.dim(1);
    std::vector<double> v(b * h, 0.0);
    const auto src = y.data();
    for (std::size_t r = 0; r < b; ++r)
      for (std::size_t t = 1; t < h; ++t) v[r * h + t] = src[r * h + t - 1];
    return Tensor({b, h, 1}, std::move(v));
  }

  NamedParameters parameters() const {
    NamedParameters p;
    store_embedding_.collect(p, "embedding.store");
    item_embedding_.collect(p, "embedding.item");
    encoder_in_.collect(p, "input.encoder");
    decoder_in_.collect(p, "input.decoder");
    for (std::size_t k = 0; k < encoder_.size(); ++k) encoder_[k].collect(p, "encoder." + std::to_string(k));
    for (std::size_t k = 0; k < decoder_.size(); ++k) decoder_[k].collect(p, "decoder." + std::to_string(k));
    head_.collect(p, "head");
    return sorted_by_name(std::move(p));
  }

  DenseLayer& head() { return head_; }
  std::vector<EncoderBlock>& encoder_blocks() { return encoder_; }
  std::vector<DecoderBlock>& decoder_blocks() { return decoder_; }

 private:
  Tensor position(std::size_t t) const { return slice(pe_, 0, 0, t); }

  ModelConfig cfg_;
  ModelInputs inputs_;
  EmbeddingTable store_embedding_, item_embedding_;
  DenseLayer encoder_in_, decoder_in_;
  std::vector<EncoderBlock> encoder_;
  std::vector<DecoderBlock> decoder_;
  DenseLayer head_;
  Tensor pe_;
};

static_assert(ForecastModel<TransformerModel>);

}  // namespace panelcast
