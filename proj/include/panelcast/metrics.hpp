#pragma once

// Forecast error metrics on linear-space sales, baselines and error
// decomposition by forecast day, store and item. Logs are natural logs of
// (value + 1).
//
//   RMSLE  = sqrt(mean((log1p(p) - log1p(a))^2))
//   RMSWLE = sqrt(sum(w (log1p(p) - log1p(a))^2) / sum(w))
//   MALE   = sqrt(mean(|log1p(p) - log1p(a)|))

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "panelcast/random.hpp"
#include "panelcast/tensor.hpp"

namespace panelcast {

namespace detail {

inline void check_pair(std::span<const double> pred, std::span<const double> actual, const char* what) {
  if (pred.size() != actual.size()) {
    throw std::invalid_argument(std::string(what) + ": length mismatch (" + std::to_string(pred.size()) + " vs " +
                                std::to_string(actual.size()) + ")");
  }
  if (pred.empty()) throw std::invalid_argument(std::string(what) + ": empty input");
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!(pred[k] >= 0.0) || !(actual[k] >= 0.0)) {
      throw DomainError(std::string(what) + ": negative or NaN value at index " + std::to_string(k));
    }
  }
}

inline double log_diff(double p, double a) { return std::log1p(p) - std::log1p(a); }

}  // namespace detail

inline double rmsle(std::span<const double> pred, std::span<const double> actual) {
  detail::check_pair(pred, actual, "rmsle");
  double s = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) s += std::pow(detail::log_diff(pred[k], actual[k]), 2);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

inline double rmswle(std::span<const double> pred, std::span<const double> actual, std::span<const double> weights) {
  detail::check_pair(pred, actual, "rmswle");
  if (weights.size() != pred.size()) throw std::invalid_argument("rmswle: weight count does not match predictions");
  double s = 0.0;
  double w = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (!(weights[k] > 0.0)) throw DomainError("rmswle: weights must be positive");
    s += weights[k] * std::pow(detail::log_diff(pred[k], actual[k]), 2);
    w += weights[k];
  }
  return std::sqrt(s / w);
}

// `without_sqrt` selects the conventional mean absolute log error instead of
// the square-rooted form.
inline double male(std::span<const double> pred, std::span<const double> actual, bool without_sqrt = false) {
  detail::check_pair(pred, actual, "male");
  double s = 0.0;
  for (std::size_t k = 0; k < pred.size(); ++k) s += std::abs(detail::log_diff(pred[k], actual[k]));
  const double m = s / static_cast<double>(pred.size());
  return without_sqrt ? m : std::sqrt(m);
}

struct Metrics {
  double rmsle = 0.0;
  double rmswle = 0.0;
  double male = 0.0;
};

inline Metrics compute_metrics(std::span<const double> pred, std::span<const double> actual,
                               std::span<const double> weights, bool male_without_sqrt = false) {
  return {rmsle(pred, actual), rmswle(pred, actual, weights), male(pred, actual, male_without_sqrt)};
}

// Log-space model outputs to linear sales, clamped at zero.
inline double to_sales(double log_value) { return std::max(0.0, std::expm1(log_value)); }

inline std::vector<double> to_sales(std::span<const double> log_values) {
  std::vector<double> out(log_values.size());
  std::transform(log_values.begin(), log_values.end(), out.begin(), [](double v) { return to_sales(v); });
  return out;
}

// A random permutation of the evaluation actuals.
inline std::vector<double> baseline_random(std::span<const double> actuals, Rng& rng) {
  if (actuals.empty()) throw std::invalid_argument("baseline_random: empty actuals");
  std::vector<double> out(actuals.begin(), actuals.end());
  for (std::size_t k = out.size(); k > 1; --k) std::swap(out[k - 1], out[uniform_index(rng, 0, k - 1)]);
  return out;
}

// Constant linear-space prediction from training sales: expm1 of the mean
// log1p value by default, or the plain mean when `log_space` is false.
inline double baseline_average(std::span<const double> train_sales, bool log_space = true) {
  if (train_sales.empty()) throw std::invalid_argument("baseline_average: empty training targets");
  double s = 0.0;
  for (double v : train_sales) {
    if (!(v >= 0.0)) throw DomainError("baseline_average: negative training sales");
    s += log_space ? std::log1p(v) : v;
  }
  const double m = s / static_cast<double>(train_sales.size());
  return log_space ? std::expm1(m) : m;
}

// Identifies one forecast value for error decomposition.
struct ForecastKey {
  std::int64_t store = 0;
  std::int64_t item = 0;
  std::size_t day_offset = 1;  // 1-based position in the horizon
};

struct ErrorTables {
  std::vector<double> per_day;  // index day_offset - 1
  std::map<std::int64_t, double> per_store;
  std::map<std::int64_t, double> per_item;
};

// Group-wise RMSLE by forecast day, store and item.
inline ErrorTables decompose_errors(std::span<const double> pred, std::span<const double> actual,
                                    std::span<const ForecastKey> keys, std::size_t horizon) {
  detail::check_pair(pred, actual, "decompose_errors");
  if (keys.size() != pred.size()) throw std::invalid_argument("decompose_errors: key count does not match predictions");
  struct Mass {
    double sq = 0.0;
    std::size_t n = 0;
    void add(double e) {
      sq += e * e;
      ++n;
    }
    double root() const { return n ? std::sqrt(sq / static_cast<double>(n)) : 0.0; }
  };
  std::vector<Mass> day(horizon);
  std::map<std::int64_t, Mass> store, item;
  for (std::size_t k = 0; k < pred.size(); ++k) {
    if (keys[k].day_offset < 1 || keys[k].day_offset > horizon) {
      throw std::invalid_argument("decompose_errors: day offset " + std::to_string(keys[k].day_offset) + " outside 1.." +
                                  std::to_string(horizon));
    }
    const double e = detail::log_diff(pred[k], actual[k]);
    day[keys[k].day_offset - 1].add(e);
    store[keys[k].store].add(e);
    item[keys[k].item].add(e);
  }
  ErrorTables t;
  for (const auto& m : day) t.per_day.push_back(m.root());
  for (const auto& [k, m] : store) t.per_store[k] = m.root();
  for (const auto& [k, m] : item) t.per_item[k] = m.root();
  return t;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};

inline MeanStd mean_std(std::span<const double> xs) {
  if (xs.empty()) return {};
  const double n = static_cast<double>(xs.size());
  const double m = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (n - 1.0))};
}

}  // namespace panelcast
