#pragma once

// Significance tests used to compare repeated-run metrics.

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/fisher_f.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace panelcast {

class DegenerateSample : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TTestResult {
  double t = 0.0;
  double df = 0.0;
  double p = 1.0;
  bool significant = false;
};

namespace detail {

inline double sample_mean(std::span<const double> x) {
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double sample_var(std::span<const double> x, double m) {
  double s = 0.0;
  for (double v : x) s += (v - m) * (v - m);
  return s / static_cast<double>(x.size() - 1);
}

}  // namespace detail

// Two-tailed Welch unequal-variance t-test.
inline TTestResult welch_ttest(std::span<const double> a, std::span<const double> b, double alpha = 0.05) {
  if (a.size() < 2 || b.size() < 2) throw DegenerateSample("welch_ttest: each sample needs at least two values");
  const double ma = detail::sample_mean(a);
  const double mb = detail::sample_mean(b);
  const double va = detail::sample_var(a, ma) / static_cast<double>(a.size());
  const double vb = detail::sample_var(b, mb) / static_cast<double>(b.size());
  const double se2 = va + vb;
  if (!(se2 > 0.0)) throw DegenerateSample("welch_ttest: both samples have zero variance");
  TTestResult r;
  r.t = (ma - mb) / std::sqrt(se2);
  r.df = se2 * se2 /
         (va * va / static_cast<double>(a.size() - 1) + vb * vb / static_cast<double>(b.size() - 1));
  const boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  r.significant = r.p < alpha;
  return r;
}

struct AnovaResult {
  double f = 0.0;
  double df_between = 0.0;
  double df_within = 0.0;
  double p = 1.0;
};

inline AnovaResult anova_oneway(const std::vector<std::vector<double>>& groups) {
  if (groups.size() < 2) throw DegenerateSample("anova_oneway: need at least two groups");
  double total = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    if (g.size() < 2) throw DegenerateSample("anova_oneway: every group needs at least two values");
    total += std::accumulate(g.begin(), g.end(), 0.0);
    n += g.size();
  }
  const double grand = total / static_cast<double>(n);
  double ss_between = 0.0;
  double ss_within = 0.0;
  for (const auto& g : groups) {
    const double m = detail::sample_mean(g);
    ss_between += static_cast<double>(g.size()) * (m - grand) * (m - grand);
    for (double v : g) ss_within += (v - m) * (v - m);
  }
  if (!(ss_within > 0.0)) throw DegenerateSample("anova_oneway: zero within-group variance");
  AnovaResult r;
  r.df_between = static_cast<double>(groups.size() - 1);
  r.df_within = static_cast<double>(n - groups.size());
  r.f = (ss_between / r.df_between) / (ss_within / r.df_within);
  const boost::math::fisher_f dist(r.df_between, r.df_within);
  r.p = boost::math::cdf(boost::math::complement(dist, r.f));
  return r;
}

struct ChiSquareResult {
  double statistic = 0.0;
  double df = 0.0;
  double p = 1.0;
};

// Goodness of fit of observed counts against equal expected counts.
inline ChiSquareResult chi_square_uniform(std::span<const std::size_t> counts) {
  if (counts.size() < 2) throw DegenerateSample("chi_square_uniform: need at least two bins");
  const double total = static_cast<double>(std::accumulate(counts.begin(), counts.end(), std::size_t{0}));
  if (!(total > 0.0)) throw DegenerateSample("chi_square_uniform: no observations");
  const double expected = total / static_cast<double>(counts.size());
  ChiSquareResult r;
  for (auto c : counts) r.statistic += std::pow(static_cast<double>(c) - expected, 2) / expected;
  r.df = static_cast<double>(counts.size() - 1);
  r.p = boost::math::cdf(boost::math::complement(boost::math::chi_squared(r.df), r.statistic));
  return r;
}

}  // namespace panelcast
