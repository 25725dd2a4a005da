#pragma once

// Recurrent encoder-decoder with static-feature context conditioning.
//
//   history [b x T x C] --encoder cell--> h_t
//   [h_t, store emb, item emb, static] --dense(tanh)--dense(tanh)--> decoder state
//   decoder: step 1 gets an all-zero go input, step k > 1 gets the prediction
//   of step k-1; each state goes through a two-layer head to one log-sales value.

#include <cstdint>
#include <string_view>
#include <vector>

#include "panelcast/layers.hpp"
#include "panelcast/model.hpp"

namespace panelcast {

template <RecurrentCell Cell = GruCell>
class BasicSeq2Seq {
 public:
  static constexpr std::string_view magic() { return "PCS2"; }

  BasicSeq2Seq(ModelConfig cfg, ModelInputs inputs, std::uint64_t seed) : cfg_(std::move(cfg)), inputs_(inputs) {
    cfg_.validate();
    Rng rng(seed);
    const std::size_t e = cfg_.embed_dim;
    encoder_ = Cell(inputs_.encoder_channels, cfg_.hidden_dim, rng);
    store_embedding_ = EmbeddingTable(inputs_.store_vocab, e, rng);
    item_embedding_ = EmbeddingTable(inputs_.item_vocab, e, rng);
    cond1_ = DenseLayer(cfg_.hidden_dim + 2 * e + inputs_.static_dim, cfg_.cond_hidden_dim, Activation::tanh, rng);
    cond2_ = DenseLayer(cfg_.cond_hidden_dim, cfg_.hidden_dim, Activation::tanh, rng);
    decoder_ = Cell(decoder_input_dim(), cfg_.hidden_dim, rng);
    head1_ = DenseLayer(cfg_.hidden_dim, cfg_.head_hidden_dim, Activation::tanh, rng);
    head2_ = DenseLayer(cfg_.head_hidden_dim, 1, Activation::identity, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }
  const ModelInputs& inputs() const { return inputs_; }
  std::size_t history_for(std::size_t anchor) const { return cfg_.history_len.resolve(anchor); }
  std::size_t decoder_input_dim() const { return 1 + (cfg_.future_covariates ? inputs_.future_dim : 0); }

  // Final encoder state; an empty history yields the zero state.
  Tensor encode(const Tensor& x_seq) const {
    if (x_seq.rank() != 3 || x_seq.dim(2) != inputs_.encoder_channels) {
      throw ShapeError("seq2seq encode: expected [b x T x " + std::to_string(inputs_.encoder_channels) + "], got " +
                       shape_str(x_seq.shape()));
    }
    const std::size_t b = x_seq.dim(0);
    const std::size_t steps = x_seq.dim(1);
    Tensor h = Tensor::zeros({b, cfg_.hidden_dim});
    for (std::size_t t = 0; t < steps; ++t) {
      h = encoder_.step(reshape(slice(x_seq, 1, t, 1), {b, inputs_.encoder_channels}), h);
    }
    return h;
  }

  // Store and item embeddings followed by the batch's static attributes.
  Tensor static_vector(const WindowBatch& batch) const {
    return concat({store_embedding_.lookup(batch.store_index), item_embedding_.lookup(batch.item_index),
                   batch.static_features},
                  1);
  }

  Tensor condition_context(const Tensor& h, const Tensor& static_vec) const {
    if (h.rank() != 2 || static_vec.rank() != 2 || h.dim(0) != static_vec.dim(0)) {
      throw ShapeError("condition_context: state " + shape_str(h.shape()) + " vs static " + shape_str(static_vec.shape()));
    }
    return cond2_(cond1_(concat({h, static_vec}, 1)));
  }

  // Autoregressive decode from the conditioned state. `future` is
  // [b x horizon x F] and only read when future covariates are enabled.
  Tensor decode_autoregressive(const Tensor& state0, std::size_t horizon, const Tensor& future = {}) const {
    const std::size_t b = state0.dim(0);
    const bool with_future = cfg_.future_covariates && inputs_.future_dim > 0;
    const auto covariates = [&](std::size_t step) {
      return reshape(slice(future, 1, step, 1), {b, inputs_.future_dim});
    };
    const auto step_input = [&](const Tensor& prev, std::size_t step) {
      return with_future ? concat({prev, covariates(step)}, 1) : prev;
    };
    Tensor state = state0;
    Tensor input = step_input(Tensor::zeros({b, 1}), 0);  // go symbol
    std::vector<Tensor> outputs;
    outputs.reserve(horizon);
    for (std::size_t t = 0; t < horizon; ++t) {
      state = decoder_.step(input, state);
      Tensor y = head2_(head1_(state));
      outputs.push_back(y);
      if (t + 1 < horizon) input = step_input(cfg_.autoregressive_feedback ? y : Tensor::zeros({b, 1}), t + 1);
    }
    return concat(outputs, 1);
  }

  // Both modes run the same autoregressive decoder.
  Tensor forward(const WindowBatch& batch, ForwardMode = ForwardMode::train) const {
    const Tensor h = encode(batch.encoder);
    return decode_autoregressive(condition_context(h, static_vector(batch)), batch.horizon(), batch.future);
  }

  NamedParameters parameters() const {
    NamedParameters p;
    encoder_.collect(p, "encoder");
    decoder_.collect(p, "decoder");
    cond1_.collect(p, "condition.0");
    cond2_.collect(p, "condition.1");
    head1_.collect(p, "head.0");
    head2_.collect(p, "head.1");
    store_embedding_.collect(p, "embedding.store");
    item_embedding_.collect(p, "embedding.item");
    return sorted_by_name(std::move(p));
  }

  Cell& encoder_cell() { return encoder_; }
  Cell& decoder_cell() { return decoder_; }
  DenseLayer& condition_layer(int k) { return k == 0 ? cond1_ : cond2_; }
  DenseLayer& head_layer(int k) { return k == 0 ? head1_ : head2_; }
  EmbeddingTable& store_embedding() { return store_embedding_; }
  EmbeddingTable& item_embedding() { return item_embedding_; }

 private:
  ModelConfig cfg_;
  ModelInputs inputs_;
  Cell encoder_;
  EmbeddingTable store_embedding_, item_embedding_;
  DenseLayer cond1_, cond2_;
  Cell decoder_;
  DenseLayer head1_, head2_;
};

using Seq2SeqModel = BasicSeq2Seq<GruCell>;

static_assert(ForecastModel<Seq2SeqModel>);

}  // namespace panelcast
