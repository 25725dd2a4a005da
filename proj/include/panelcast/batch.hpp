#pragma once

// Window sampling and minibatch assembly.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "panelcast/panel.hpp"
#include "panelcast/random.hpp"
#include "panelcast/tensor.hpp"

namespace panelcast {

// Position of one (store, item) series inside a cube.
struct SeriesRef {
  std::size_t store = 0;
  std::size_t item = 0;
  friend bool operator==(const SeriesRef&, const SeriesRef&) = default;
};

inline std::vector<SeriesRef> all_series(const PanelCube& cube) {
  std::vector<SeriesRef> out;
  out.reserve(cube.n_series());
  for (std::size_t s = 0; s < cube.n_stores(); ++s)
    for (std::size_t i = 0; i < cube.n_items(); ++i) out.push_back({s, i});
  return out;
}

struct WindowBatch {
  Tensor encoder;          // [b x T x (1 + channels)]: log sales then covariates, days (anchor-T, anchor]
  Tensor static_features;  // [b x s]: store then item attributes
  std::vector<std::size_t> store_index;  // embedding rows
  std::vector<std::size_t> item_index;
  std::vector<SeriesRef> series;
  Tensor targets;  // [b x H] log sales, days (anchor, anchor+H]
  Tensor future;   // [b x H x F] known-future covariates over the target days
  std::vector<double> weights;  // 1.25 for perishable items, else 1.0
  std::size_t anchor = 0;

  std::size_t size() const { return series.size(); }
  std::size_t history() const { return encoder.dim(1); }
  std::size_t horizon() const { return targets.dim(1); }
};

inline constexpr double kPerishableWeight = 1.25;

class WindowError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

enum class AnchorMode { random, fixed };

// Inclusive range of admissible training anchors.
struct AnchorRange {
  std::size_t lo = 0;
  std::size_t hi = 0;
};

inline AnchorRange training_anchor_range(const SplitSpec& split) {
  if (split.train_end < split.horizon || split.min_anchor > split.max_train_anchor()) {
    throw std::invalid_argument("empty training anchor range");
  }
  return {split.min_anchor, split.max_train_anchor()};
}

// Random mode draws uniformly from [min_anchor, train_end - horizon]; fixed
// mode returns the latest training anchor, so targets end on the last
// training day.
inline std::size_t sample_anchor(const SplitSpec& split, Rng& rng, AnchorMode mode) {
  const auto range = training_anchor_range(split);
  if (mode == AnchorMode::fixed) return range.hi;
  return uniform_index(rng, range.lo, range.hi);
}

// Slices encoder, static, target and future-covariate tensors for the given
// series at one anchor. `history` days end at the anchor, inclusive.
inline WindowBatch build_batch(const PanelCube& cube, std::size_t anchor, std::span<const SeriesRef> series,
                               std::size_t history, std::size_t horizon) {
  if (history > anchor + 1) {
    throw WindowError("history of " + std::to_string(history) + " days does not fit before anchor " + std::to_string(anchor));
  }
  if (anchor + horizon >= cube.n_days) {
    throw WindowError("targets after anchor " + std::to_string(anchor) + " run past the panel end");
  }
  const std::size_t b = series.size();
  const std::size_t channels = 1 + cube.channels.size();
  const std::size_t n_future = cube.known_future_channels();
  const std::size_t n_static = cube.n_static();
  const std::size_t ss = cube.store_static_names.size();
  const std::size_t is = cube.item_static_names.size();
  const std::size_t first = anchor + 1 - history;

  std::vector<double> enc(b * history * channels);
  std::vector<double> stat(b * n_static);
  std::vector<double> tgt(b * horizon);
  std::vector<double> fut(b * horizon * n_future);
  WindowBatch out;
  out.anchor = anchor;
  out.series.assign(series.begin(), series.end());
  for (std::size_t r = 0; r < b; ++r) {
    const auto [s, i] = series[r];
    if (s >= cube.n_stores() || i >= cube.n_items()) throw WindowError("series reference outside the cube");
    for (std::size_t t = 0; t < history; ++t) {
      const std::size_t day = first + t;
      double* row = enc.data() + (r * history + t) * channels;
      row[0] = cube.target_at(s, i, day);
      for (std::size_t c = 0; c < cube.channels.size(); ++c) row[1 + c] = cube.channel_at(cube.channels[c], s, i, day);
    }
    std::copy_n(cube.store_static.begin() + static_cast<std::ptrdiff_t>(s * ss), ss, stat.begin() + static_cast<std::ptrdiff_t>(r * n_static));
    std::copy_n(cube.item_static.begin() + static_cast<std::ptrdiff_t>(i * is), is,
                stat.begin() + static_cast<std::ptrdiff_t>(r * n_static + ss));
    for (std::size_t h = 0; h < horizon; ++h) {
      const std::size_t day = anchor + 1 + h;
      tgt[r * horizon + h] = cube.target_at(s, i, day);
      std::size_t f = 0;
      for (const auto& ch : cube.channels) {
        if (ch.known_future) fut[(r * horizon + h) * n_future + f++] = cube.channel_at(ch, s, i, day);
      }
    }
    out.store_index.push_back(cube.store_embed[s]);
    out.item_index.push_back(cube.item_embed[i]);
    out.weights.push_back(cube.perishable[i] ? kPerishableWeight : 1.0);
  }
  out.encoder = Tensor({b, history, channels}, std::move(enc));
  out.static_features = Tensor({b, n_static}, std::move(stat));
  out.targets = Tensor({b, horizon}, std::move(tgt));
  out.future = Tensor({b, horizon, n_future}, std::move(fut));
  return out;
}

// Uniform random subset of series without replacement (all of them, shuffled,
// when the request exceeds the panel).
inline std::vector<SeriesRef> sample_series(const PanelCube& cube, std::size_t count, Rng& rng) {
  auto all = all_series(cube);
  count = std::min(count, all.size());
  for (std::size_t k = 0; k < count; ++k) std::swap(all[k], all[uniform_index(rng, k, all.size() - 1)]);
  all.resize(count);
  return all;
}

}  // namespace panelcast
