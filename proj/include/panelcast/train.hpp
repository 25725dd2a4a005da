#pragma once

// Training loop, evaluation over split periods, repeated seeded runs,
// baselines and the ablation sweeps.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <limits>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "panelcast/batch.hpp"
#include "panelcast/config.hpp"
#include "panelcast/metrics.hpp"
#include "panelcast/model.hpp"
#include "panelcast/optim.hpp"
#include "panelcast/panel.hpp"
#include "panelcast/seq2seq.hpp"
#include "panelcast/stats.hpp"
#include "panelcast/transformer.hpp"

namespace panelcast {

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ModelVariant { seq2seq, seq2seq_trimmed, transformer };

inline constexpr std::size_t kTrimmedHistory = 200;

inline std::string variant_name(ModelVariant v) {
  switch (v) {
    case ModelVariant::seq2seq: return "seq2seq";
    case ModelVariant::seq2seq_trimmed: return "seq2seq-trimmed";
    case ModelVariant::transformer: return "transformer";
  }
  return "?";
}

inline ModelVariant parse_variant(std::string_view s) {
  if (s == "seq2seq") return ModelVariant::seq2seq;
  if (s == "seq2seq-trimmed") return ModelVariant::seq2seq_trimmed;
  if (s == "transformer") return ModelVariant::transformer;
  throw ConfigError("unknown model '" + std::string(s) + "' (seq2seq, seq2seq-trimmed, transformer)");
}

// The trimmed recurrent model and the transformer see at most 200 (cap) days.
inline ModelConfig configure_variant(ModelConfig cfg, ModelVariant v) {
  if (v == ModelVariant::seq2seq_trimmed) cfg.history_len = cfg.history_len.capped(kTrimmedHistory);
  if (v == ModelVariant::transformer) cfg.history_len = cfg.history_len.capped(cfg.history_cap);
  return cfg;
}

// Builds the model for `v` and hands it to `f`.
template <typename F>
decltype(auto) with_model(ModelVariant v, const ModelConfig& cfg, const ModelInputs& inputs, std::uint64_t seed, F&& f) {
  const ModelConfig c = configure_variant(cfg, v);
  if (v == ModelVariant::transformer) {
    TransformerModel m(c, inputs, seed);
    return f(m);
  }
  Seq2SeqModel m(c, inputs, seed);
  return f(m);
}

inline std::vector<EvalPeriod> evaluation_periods(const SplitSpec& split) {
  if (!split.has_evaluation) return {};
  return {EvalPeriod::validation, EvalPeriod::p1, EvalPeriod::p2, EvalPeriod::p3};
}

// Forecasts for every series over one horizon window, row-major [series x H].
struct WindowForecast {
  std::size_t anchor = 0;
  std::size_t horizon = 0;
  std::vector<SeriesRef> series;
  std::vector<double> pred_log;
  std::vector<double> actual_log;
  std::vector<double> weights;  // per value

  std::vector<double> pred_sales() const { return to_sales(pred_log); }
  std::vector<double> actual_sales() const { return to_sales(actual_log); }

  std::vector<ForecastKey> keys(const PanelCube& cube) const {
    std::vector<ForecastKey> k;
    k.reserve(pred_log.size());
    for (const auto& s : series)
      for (std::size_t h = 0; h < horizon; ++h) k.push_back({cube.store_ids[s.store], cube.item_ids[s.item], h + 1});
    return k;
  }
};

// Inference-mode forecasts for the window that starts after `anchor`.
template <ForecastModel M>
WindowForecast forecast_window(const M& model, const PanelCube& cube, std::size_t anchor, std::size_t chunk = 256) {
  WindowForecast f;
  f.anchor = anchor;
  f.horizon = model.config().horizon;
  f.series = all_series(cube);
  const std::size_t history = model.history_for(anchor);
  for (std::size_t start = 0; start < f.series.size(); start += chunk) {
    const std::size_t n = std::min(chunk, f.series.size() - start);
    const auto batch = build_batch(cube, anchor, std::span(f.series).subspan(start, n), history, f.horizon);
    const Tensor pred = model.forward(batch, ForwardMode::infer);
    f.pred_log.insert(f.pred_log.end(), pred.data().begin(), pred.data().end());
    f.actual_log.insert(f.actual_log.end(), batch.targets.data().begin(), batch.targets.data().end());
    for (double w : batch.weights) f.weights.insert(f.weights.end(), f.horizon, w);
  }
  return f;
}

template <ForecastModel M>
WindowForecast forecast_period(const M& model, const PanelCube& cube, EvalPeriod p) {
  return forecast_window(model, cube, cube.split.anchor_for(p));
}

inline Metrics window_metrics(const WindowForecast& f, bool male_without_sqrt = false) {
  const auto p = f.pred_sales();
  const auto a = f.actual_sales();
  return compute_metrics(p, a, f.weights, male_without_sqrt);
}

// Model selection score: validation RMSLE, or the last training window when
// the split has no evaluation periods.
template <ForecastModel M>
double selection_rmsle(const M& model, const PanelCube& cube) {
  const auto& split = cube.split;
  const std::size_t anchor = split.has_evaluation ? split.anchor_for(EvalPeriod::validation) : split.max_train_anchor();
  const auto f = forecast_window(model, cube, anchor);
  return rmsle(f.pred_sales(), f.actual_sales());
}

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_rmsle = 0.0;
};

struct TrainState {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
  AdamState adam;
  double best_val = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;
  std::size_t patience_left = 0;
  bool stopped_early = false;
  std::vector<EpochRecord> history;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Trains in place and leaves the model holding its best-validation parameters.
template <ForecastModel M>
TrainState train(M& model, const PanelCube& cube, const TrainConfig& cfg, std::uint64_t seed,
                 const EpochCallback& on_epoch = {}) {
  cfg.validate();
  cube.split.validate(cube.n_days);
  if (cube.split.horizon != model.config().horizon) throw ConfigError("model horizon differs from the split horizon");
  if (model.history_for(cube.split.min_anchor) > cube.split.min_anchor + 1) {
    throw ConfigError("history of " + model.config().history_len.to_string() + " days does not fit before the earliest anchor (day " +
                      std::to_string(cube.split.min_anchor) + "); raise min_history or shorten history_len");
  }
  const NamedParameters params = model.parameters();
  const AdamOptions opt{cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon};
  const AnchorMode mode = cfg.random_anchor ? AnchorMode::random : AnchorMode::fixed;
  Rng rng(derive_seed(seed, 1));
  TrainState st;
  st.seed = seed;
  st.patience_left = cfg.patience;
  ParameterSnapshot best = snapshot(params);
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < cfg.batches_per_epoch; ++b) {
      const std::size_t anchor = sample_anchor(cube.split, rng, mode);
      const auto series = sample_series(cube, cfg.batch_size, rng);
      const auto batch = build_batch(cube, anchor, series, model.history_for(anchor), model.config().horizon);
      const Tensor loss = mse_loss(model.forward(batch, ForwardMode::train), batch.targets);
      const double v = loss.item();
      if (!std::isfinite(v)) {
        throw DivergenceError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                              std::to_string(b + 1) + " (anchor day " + std::to_string(anchor) + ")");
      }
      loss_sum += v;
      zero_grads(params);
      backward(loss);
      clip_grad_norm(params, cfg.clip_norm);
      adam_step(st.adam, params, opt);
    }
    zero_grads(params);
    EpochRecord rec{epoch, loss_sum / static_cast<double>(cfg.batches_per_epoch), selection_rmsle(model, cube)};
    if (!std::isfinite(rec.val_rmsle)) throw DivergenceError("non-finite validation RMSLE at epoch " + std::to_string(epoch));
    st.epoch = epoch;
    st.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (rec.val_rmsle < st.best_val) {
      st.best_val = rec.val_rmsle;
      st.best_epoch = epoch;
      st.patience_left = cfg.patience;
      best = snapshot(params);
    } else if (cfg.patience > 0 && --st.patience_left == 0) {
      st.stopped_early = true;
      break;
    }
  }
  auto writable = params;
  restore(writable, best);
  return st;
}

struct PeriodResult {
  EvalPeriod period = EvalPeriod::validation;
  Metrics metrics;
  std::vector<double> daily;  // RMSLE per forecast day
  ErrorTables groups;
};

template <ForecastModel M>
PeriodResult evaluate_period(const M& model, const PanelCube& cube, EvalPeriod p, bool male_without_sqrt = false) {
  const auto f = forecast_period(model, cube, p);
  const auto pred = f.pred_sales();
  const auto act = f.actual_sales();
  PeriodResult r;
  r.period = p;
  r.metrics = compute_metrics(pred, act, f.weights, male_without_sqrt);
  const auto keys = f.keys(cube);
  r.groups = decompose_errors(pred, act, keys, f.horizon);
  r.daily = r.groups.per_day;
  return r;
}

template <ForecastModel M>
std::vector<PeriodResult> evaluate_model(const M& model, const PanelCube& cube, const std::vector<EvalPeriod>& periods,
                                         bool male_without_sqrt = false) {
  std::vector<PeriodResult> out;
  for (auto p : periods) out.push_back(evaluate_period(model, cube, p, male_without_sqrt));
  return out;
}

struct RunResult {
  std::uint64_t seed = 0;
  TrainState state;
  std::vector<PeriodResult> periods;
};

// One seeded train-and-evaluate replica. `checkpoint` (if set) receives the
// best parameters.
inline RunResult run_once(ModelVariant variant, const ModelConfig& mcfg, const TrainConfig& tcfg, const PanelCube& cube,
                          std::uint64_t seed, const std::vector<EvalPeriod>& periods,
                          const std::function<void(const NamedParameters&, std::string_view magic, std::uint64_t digest)>&
                              checkpoint = {},
                          const EpochCallback& on_epoch = {}) {
  return with_model(variant, mcfg, ModelInputs::from(cube), derive_seed(seed, 0), [&](auto& model) {
    RunResult r;
    r.seed = seed;
    r.state = train(model, cube, tcfg, seed, on_epoch);
    r.periods = evaluate_model(model, cube, periods, tcfg.male_without_sqrt);
    using Model = std::remove_cvref_t<decltype(model)>;
    if (checkpoint) checkpoint(model.parameters(), Model::magic(), config_digest(model.config()));
    return r;
  });
}

// Worker count for replica parallelism: PANELCAST_THREADS if set, otherwise
// the hardware concurrency.
inline std::size_t replica_threads() {
  if (const char* env = std::getenv("PANELCAST_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs `fn(k)` for k in [0, n) on up to `threads` workers; results keep index order.
template <typename R>
std::vector<R> run_replicas(std::size_t n, std::size_t threads, const std::function<R(std::size_t)>& fn) {
  std::vector<std::optional<R>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t k; (k = next.fetch_add(1)) < n;) {
      try {
        slots[k].emplace(fn(k));
      } catch (...) {
        errors[k] = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::min(std::max<std::size_t>(threads, 1), n);
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<R> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

// Seeds are base_seed, base_seed + 1, ...
inline std::vector<RunResult> repeat_runs(ModelVariant variant, const ModelConfig& mcfg, const TrainConfig& tcfg,
                                          const PanelCube& cube, std::size_t runs, std::uint64_t base_seed,
                                          std::size_t threads = replica_threads()) {
  const auto periods = evaluation_periods(cube.split);
  return run_replicas<RunResult>(runs, threads, [&](std::size_t k) {
    return run_once(variant, mcfg, tcfg, cube, base_seed + k, periods);
  });
}

// Report rows. Metric names are rmsle, rmswle and male.
struct ResultRow {
  std::string period, model, config, metric;
  double mean = 0.0;
  double std = 0.0;
  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

struct DailyRow {
  std::string period;
  std::size_t day_offset = 1;
  double rmsle = 0.0;
  double std = 0.0;
};

struct GroupRow {
  std::string period, dimension, key;
  double rmsle = 0.0;
};

inline const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> names{"rmsle", "rmswle", "male"};
  return names;
}

inline double metric_value(const Metrics& m, std::string_view name) {
  if (name == "rmsle") return m.rmsle;
  if (name == "rmswle") return m.rmswle;
  if (name == "male") return m.male;
  throw std::invalid_argument("unknown metric '" + std::string(name) + "'");
}

// Per-run values of one metric for one period, in run order.
inline std::vector<double> metric_samples(const std::vector<RunResult>& runs, EvalPeriod p, std::string_view metric) {
  std::vector<double> v;
  for (const auto& r : runs)
    for (const auto& pr : r.periods)
      if (pr.period == p) v.push_back(metric_value(pr.metrics, metric));
  return v;
}

inline std::vector<ResultRow> aggregate_results(const std::vector<RunResult>& runs, const std::string& model,
                                                const std::string& config) {
  std::vector<ResultRow> rows;
  if (runs.empty()) return rows;
  for (const auto& pr : runs.front().periods)
    for (const auto& m : metric_names()) {
      const auto s = mean_std(metric_samples(runs, pr.period, m));
      rows.push_back({period_name(pr.period), model, config, m, s.mean, s.std});
    }
  return rows;
}

inline std::vector<DailyRow> aggregate_daily(const std::vector<RunResult>& runs) {
  std::vector<DailyRow> rows;
  if (runs.empty()) return rows;
  for (std::size_t k = 0; k < runs.front().periods.size(); ++k) {
    const auto& first = runs.front().periods[k];
    for (std::size_t d = 0; d < first.daily.size(); ++d) {
      std::vector<double> v;
      for (const auto& r : runs) v.push_back(r.periods[k].daily[d]);
      const auto s = mean_std(v);
      rows.push_back({period_name(first.period), d + 1, s.mean, s.std});
    }
  }
  return rows;
}

// Per-store and per-item RMSLE averaged over runs.
inline std::vector<GroupRow> aggregate_groups(const std::vector<RunResult>& runs) {
  std::vector<GroupRow> rows;
  if (runs.empty()) return rows;
  const double n = static_cast<double>(runs.size());
  for (std::size_t k = 0; k < runs.front().periods.size(); ++k) {
    const auto period = period_name(runs.front().periods[k].period);
    const auto emit = [&](const char* dim, auto member) {
      for (const auto& [key, first_value] : runs.front().periods[k].groups.*member) {
        double s = 0.0;
        for (const auto& r : runs) s += (r.periods[k].groups.*member).at(key);
        rows.push_back({period, dim, std::to_string(key), s / n});
      }
    };
    emit("store", &ErrorTables::per_store);
    emit("item", &ErrorTables::per_item);
  }
  return rows;
}

// Linear-space actuals and weights for every series over a period.
struct PeriodActuals {
  std::vector<double> sales;
  std::vector<double> weights;
};

inline PeriodActuals period_actuals(const PanelCube& cube, EvalPeriod p) {
  const auto& span = cube.split.span(p);
  PeriodActuals a;
  for (const auto& s : all_series(cube))
    for (std::size_t d = span.first; d <= span.last; ++d) {
      a.sales.push_back(to_sales(cube.target_at(s.store, s.item, d)));
      a.weights.push_back(cube.perishable[s.item] ? kPerishableWeight : 1.0);
    }
  return a;
}

// Training sales of every series through the last training day.
inline std::vector<double> training_sales(const PanelCube& cube) {
  std::vector<double> v;
  v.reserve(cube.n_series() * (cube.split.train_end + 1));
  for (const auto& s : all_series(cube))
    for (std::size_t d = 0; d <= cube.split.train_end; ++d) v.push_back(to_sales(cube.target_at(s.store, s.item, d)));
  return v;
}

// Random baseline over `repeats` permutations and the average baseline, as
// rows with model names "random" and "average".
inline std::vector<ResultRow> baseline_rows(const PanelCube& cube, const std::vector<EvalPeriod>& periods,
                                            const TrainConfig& tcfg, std::uint64_t seed, std::size_t repeats = 5) {
  std::vector<ResultRow> rows;
  const double constant = baseline_average(training_sales(cube), tcfg.average_in_log_space);
  const std::string avg_cfg = tcfg.average_in_log_space ? "log-mean" : "linear-mean";
  for (auto p : periods) {
    const auto a = period_actuals(cube, p);
    Rng rng(derive_seed(seed, 2));
    std::vector<Metrics> random_runs;
    for (std::size_t k = 0; k < repeats; ++k) {
      const auto pred = baseline_random(a.sales, rng);
      random_runs.push_back(compute_metrics(pred, a.sales, a.weights, tcfg.male_without_sqrt));
    }
    const std::vector<double> flat(a.sales.size(), constant);
    const Metrics avg = compute_metrics(flat, a.sales, a.weights, tcfg.male_without_sqrt);
    for (const auto& m : metric_names()) {
      std::vector<double> v;
      for (const auto& r : random_runs) v.push_back(metric_value(r, m));
      const auto s = mean_std(v);
      rows.push_back({period_name(p), "random", "permutation", m, s.mean, s.std});
    }
    for (const auto& m : metric_names()) rows.push_back({period_name(p), "average", avg_cfg, m, metric_value(avg, m), 0.0});
  }
  return rows;
}

// One configuration in an ablation sweep.
struct AblationConfig {
  std::string name;
  ModelConfig model;
  TrainConfig train;
};

inline std::vector<AblationConfig> sweep_trick(const ModelConfig& m, const TrainConfig& t) {
  TrainConfig on = t, off = t;
  on.random_anchor = true;
  off.random_anchor = false;
  return {{"trick-on", m, on}, {"trick-off", m, off}};
}

inline std::vector<AblationConfig> sweep_length(const ModelConfig& m, const TrainConfig& t) {
  std::vector<AblationConfig> out;
  for (auto h : {HistoryLength::full(), HistoryLength::days(200), HistoryLength::days(75), HistoryLength::days(10),
                 HistoryLength::days(1), HistoryLength::days(0)}) {
    ModelConfig c = m;
    c.history_len = h;
    out.push_back({"len-" + h.to_string(), c, t});
  }
  return out;
}

struct AblationRow {
  std::string period, config, metric;
  double mean = 0.0;
  double std = 0.0;
  // Welch test against the reference configuration; NaN for the reference
  // itself or when the test is undefined.
  double t = std::numeric_limits<double>::quiet_NaN();
  double p = std::numeric_limits<double>::quiet_NaN();
  bool significant = false;
};

struct AblationReport {
  std::string reference;
  std::vector<AblationRow> rows;
  std::vector<std::vector<RunResult>> runs;  // per configuration
};

// Runs every configuration with the same seeds and compares each to
// configs[0] with a two-tailed Welch test.
inline AblationReport ablate(const std::vector<AblationConfig>& configs, ModelVariant variant, const PanelCube& cube,
                             std::size_t runs, std::uint64_t base_seed, double alpha = 0.05,
                             std::size_t threads = replica_threads()) {
  if (configs.empty()) throw std::invalid_argument("ablate: empty sweep");
  AblationReport rep;
  rep.reference = configs.front().name;
  const auto periods = evaluation_periods(cube.split);
  const std::size_t total = configs.size() * runs;
  auto flat = run_replicas<RunResult>(total, threads, [&](std::size_t k) {
    const auto& c = configs[k / runs];
    return run_once(variant, c.model, c.train, cube, base_seed + k % runs, periods);
  });
  for (std::size_t c = 0; c < configs.size(); ++c) {
    rep.runs.emplace_back(std::make_move_iterator(flat.begin() + static_cast<std::ptrdiff_t>(c * runs)),
                          std::make_move_iterator(flat.begin() + static_cast<std::ptrdiff_t>((c + 1) * runs)));
  }
  for (auto p : periods)
    for (std::size_t c = 0; c < configs.size(); ++c)
      for (const auto& m : metric_names()) {
        const auto v = metric_samples(rep.runs[c], p, m);
        const auto s = mean_std(v);
        AblationRow row{period_name(p), configs[c].name, m, s.mean, s.std};
        if (c > 0) {
          try {
            const auto r = welch_ttest(v, metric_samples(rep.runs[0], p, m), alpha);
            row.t = r.t;
            row.p = r.p;
            row.significant = r.significant;
          } catch (const DegenerateSample&) {
          }
        }
        rep.rows.push_back(row);
      }
  return rep;
}

}  // namespace panelcast
