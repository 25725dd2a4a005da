#pragma once

// Reproducible synthetic panels for desk-scale experiments.
//
// rate(s, i, d) = scale(s, i) * weekly(d) * trend(d) * regime(d)
//   scale   ~ exp(Normal(scale_mu, scale_sigma))      (long-tailed levels)
//   weekly  = 1 + weekly_amplitude * sin(2 pi (d mod 7) / 7)
//   trend   = exp(growth * d / 365) * (1 + yearly_amplitude * sin(2 pi d / 365.25))
//   regime  = regime_shift_factor for d >= regime_shift_day, else 1
// sales are zero with probability `sparsity`, otherwise Poisson(rate) (or the
// rate itself when noise = none).

#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>

#include "panelcast/config.hpp"
#include "panelcast/ingest.hpp"
#include "panelcast/panel.hpp"
#include "panelcast/random.hpp"

namespace panelcast {

struct SynthConfig {
  std::size_t stores = 4;
  std::size_t items = 8;
  std::size_t days = 400;
  double sparsity = 0.0;
  std::uint64_t seed = 1;
  double weekly_amplitude = 0.3;
  double yearly_amplitude = 0.0;
  double growth = 0.0;  // log-level change per 365 days
  double scale_mu = 1.5;
  double scale_sigma = 0.8;
  std::int64_t regime_shift_day = -1;  // negative disables
  double regime_shift_factor = 1.0;
  bool poisson_noise = true;
  double perishable_rate = 0.3;
  std::size_t min_history = 300;

  void validate() const {
    if (stores == 0 || items == 0 || days == 0) throw ConfigError("stores, items and days must be > 0");
    if (!(sparsity >= 0.0 && sparsity <= 1.0)) throw ConfigError("sparsity must lie in [0, 1]");
    if (std::abs(weekly_amplitude) >= 1.0 || std::abs(yearly_amplitude) >= 1.0) {
      throw ConfigError("seasonal amplitudes must be below 1 in magnitude");
    }
    if (!(scale_sigma >= 0.0) || !(regime_shift_factor > 0.0)) throw ConfigError("invalid scale or regime settings");
    if (!(perishable_rate >= 0.0 && perishable_rate <= 1.0)) throw ConfigError("perishable_rate must lie in [0, 1]");
  }

  double weekly(std::size_t d) const {
    return 1.0 + weekly_amplitude * std::sin(2.0 * std::numbers::pi * static_cast<double>(d % 7) / 7.0);
  }

  double trend(std::size_t d) const {
    const double x = static_cast<double>(d);
    double v = std::exp(growth * x / 365.0) * (1.0 + yearly_amplitude * std::sin(2.0 * std::numbers::pi * x / 365.25));
    if (regime_shift_day >= 0 && static_cast<std::int64_t>(d) >= regime_shift_day) v *= regime_shift_factor;
    return v;
  }
};

inline SynthConfig parse_synth_config(const KeyValueFile& kv) {
  SynthConfig c;
  kv.read("stores", c.stores);
  kv.read("items", c.items);
  kv.read("days", c.days);
  kv.read("sparsity", c.sparsity);
  kv.read("seed", c.seed);
  kv.read("weekly_amplitude", c.weekly_amplitude);
  kv.read("yearly_amplitude", c.yearly_amplitude);
  kv.read("growth", c.growth);
  kv.read("scale_mu", c.scale_mu);
  kv.read("scale_sigma", c.scale_sigma);
  kv.read("regime_shift_day", c.regime_shift_day);
  kv.read("regime_shift_factor", c.regime_shift_factor);
  if (auto n = kv.get("noise")) {
    if (*n == "poisson") c.poisson_noise = true;
    else if (*n == "none") c.poisson_noise = false;
    else throw ConfigError("noise must be 'poisson' or 'none'");
  }
  kv.read("perishable_rate", c.perishable_rate);
  kv.read("min_history", c.min_history);
  kv.reject_unused();
  c.validate();
  return c;
}

// Linear-space sales before the log transform, [store][item][day].
struct SynthSales {
  std::vector<double> sales;
  std::vector<double> scale;  // per series
};

inline SynthSales synth_sales(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  std::normal_distribution<double> level(cfg.scale_mu, cfg.scale_sigma);
  std::bernoulli_distribution zero(cfg.sparsity);
  SynthSales out;
  const std::size_t n_series = cfg.stores * cfg.items;
  out.scale.resize(n_series);
  for (auto& s : out.scale) s = std::exp(level(rng));
  out.sales.assign(n_series * cfg.days, 0.0);
  for (std::size_t s = 0; s < n_series; ++s)
    for (std::size_t d = 0; d < cfg.days; ++d) {
      const double rate = out.scale[s] * cfg.weekly(d) * cfg.trend(d);
      double v = 0.0;
      if (!zero(rng)) v = cfg.poisson_noise ? static_cast<double>(std::poisson_distribution<long>(rate)(rng)) : rate;
      out.sales[s * cfg.days + d] = v;
    }
  return out;
}

// Builds a cube from `cfg`. Without an explicit split a trailing split is
// used (three test periods, validation, a gap, then training data).
inline PanelCube synth_generate(const SynthConfig& cfg, std::optional<SplitSpec> split = std::nullopt) {
  cfg.validate();
  PanelCube c;
  c.origin = days_since_epoch(kFavoritaOrigin);
  c.n_days = cfg.days;
  c.split = split ? *split : SplitSpec::trailing(cfg.days, cfg.min_history);
  c.split.validate(c.n_days);
  for (std::size_t s = 0; s < cfg.stores; ++s) {
    c.store_ids.push_back(static_cast<std::int64_t>(s + 1));
    c.store_embed.push_back(static_cast<std::uint32_t>(s));
  }
  for (std::size_t i = 0; i < cfg.items; ++i) {
    c.item_ids.push_back(static_cast<std::int64_t>(i + 1));
    c.item_embed.push_back(static_cast<std::uint32_t>(i));
  }
  c.store_vocab = static_cast<std::uint32_t>(cfg.stores + 1);
  c.item_vocab = static_cast<std::uint32_t>(cfg.items + 1);

  const auto sales = synth_sales(cfg);
  c.target.resize(sales.sales.size());
  for (std::size_t k = 0; k < sales.sales.size(); ++k) c.target[k] = std::log1p(std::max(0.0, sales.sales[k]));

  // Static attributes come from a separate stream so they do not perturb sales.
  Rng meta_rng(derive_seed(cfg.seed, 1));
  std::bernoulli_distribution perish(cfg.perishable_rate);
  for (std::size_t i = 0; i < cfg.items; ++i) c.perishable.push_back(perish(meta_rng) ? 1 : 0);
  std::vector<std::int64_t> cluster;
  for (std::size_t s = 0; s < cfg.stores; ++s) cluster.push_back(static_cast<std::int64_t>(s % 3));
  std::vector<std::vector<double>> srows(cfg.stores);
  append_one_hot("cluster", cluster, c.store_static_names, srows);
  for (auto& r : srows) c.store_static.insert(c.store_static.end(), r.begin(), r.end());
  c.item_static_names.push_back("perishable");
  for (auto p : c.perishable) c.item_static.push_back(p);

  Channel dow_sin{"dow_sin", ChannelScope::day, true, 0.0, 1.0, std::vector<double>(cfg.days)};
  Channel dow_cos{"dow_cos", ChannelScope::day, true, 0.0, 1.0, std::vector<double>(cfg.days)};
  for (std::size_t d = 0; d < cfg.days; ++d) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(d % 7) / 7.0;
    dow_sin.values[d] = std::sin(a);
    dow_cos.values[d] = std::cos(a);
  }
  for (Channel* ch : {&dow_sin, &dow_cos}) {
    normalize_channel(*ch, c.n_days, c.split.train_end);
    c.channels.push_back(std::move(*ch));
  }
  c.check_consistency();
  return c;
}

}  // namespace panelcast
