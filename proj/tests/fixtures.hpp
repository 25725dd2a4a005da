#pragma once

// Small shared helpers for the test suites.

#include <random>
#include <vector>

#include "panelcast/panelcast.hpp"

namespace panelcast::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(numel_of(shape));
  for (auto& x : v) x = d(rng);
  return Tensor(shape, std::move(v), requires_grad);
}

inline void fill(Tensor t, double value) {
  for (auto& x : t.mutable_data()) x = value;
}

inline void zero_all(const NamedParameters& params) {
  for (const auto& [name, t] : params) fill(t, 0.0);
}

// Tiny dimensions for gradient checks.
inline ModelConfig micro_config(std::size_t horizon = 3) {
  ModelConfig c;
  c.horizon = horizon;
  c.hidden_dim = 3;
  c.embed_dim = 2;
  c.cond_hidden_dim = 3;
  c.head_hidden_dim = 3;
  c.d_model = 4;
  c.heads = 2;
  c.blocks = 1;
  c.ff_dim = 4;
  c.history_cap = 200;
  return c;
}

// A synthetic cube with a trailing split: 120 days leaves training days 0..39.
inline PanelCube small_cube(std::size_t stores = 2, std::size_t items = 3, std::uint64_t seed = 3, std::size_t days = 120,
                            std::size_t min_history = 10) {
  SynthConfig s;
  s.stores = stores;
  s.items = items;
  s.days = days;
  s.seed = seed;
  s.min_history = min_history;
  return synth_generate(s);
}

}  // namespace panelcast::testing
