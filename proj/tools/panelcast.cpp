// panelcast: ingest, synthesize, train, evaluate and ablate from the command line.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 missing input or I/O error,
// 3 configuration or usage error, 4 malformed data, 5 checkpoint/config digest
// mismatch, 6 training diverged.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "panelcast/panelcast.hpp"

namespace fs = std::filesystem;
using namespace panelcast;

namespace {

enum Exit { kOk = 0, kFailure = 1, kMissing = 2, kConfig = 3, kData = 4, kDigest = 5, kDiverged = 6 };

class MissingFile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const std::string& path, const std::string& what) {
  if (!fs::is_regular_file(path)) throw MissingFile(what + " not found: " + path);
}

PanelCube open_cube(const std::string& path) {
  require_file(path, "cube file");
  return load_cube(path);
}

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return {};
  require_file(path, "config file");
  return parse_run_config(KeyValueFile::load(path));
}

std::string config_text_digest(const RunConfig& rc) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_config_text(rc))));
  return buf;
}

std::vector<EvalPeriod> parse_periods(const std::string& s) {
  if (s == "all") return {EvalPeriod::p1, EvalPeriod::p2, EvalPeriod::p3};
  if (s == "val") return {EvalPeriod::validation};
  if (s == "1") return {EvalPeriod::p1};
  if (s == "2") return {EvalPeriod::p2};
  if (s == "3") return {EvalPeriod::p3};
  throw ConfigError("--period must be 1, 2, 3, all or val");
}

void print_results(const std::vector<ResultRow>& rows) {
  for (const auto& r : rows) {
    std::cout << "period " << r.period << "  " << r.model << " [" << r.config << "]  " << r.metric << " = "
              << format_double(r.mean) << " +/- " << format_double(r.std) << '\n';
  }
}

// ANOVA of daily RMSLE across test periods, when at least two are present.
void print_daily_anova(const std::vector<RunResult>& runs) {
  if (runs.empty()) return;
  std::vector<std::vector<double>> groups;
  for (std::size_t k = 0; k < runs.front().periods.size(); ++k) {
    if (runs.front().periods[k].period == EvalPeriod::validation) continue;
    std::vector<double> daily(runs.front().periods[k].daily.size(), 0.0);
    for (const auto& r : runs)
      for (std::size_t d = 0; d < daily.size(); ++d) daily[d] += r.periods[k].daily[d] / static_cast<double>(runs.size());
    groups.push_back(daily);
  }
  if (groups.size() < 2) return;
  try {
    const auto a = anova_oneway(groups);
    std::cout << "daily rmsle anova across test periods: F = " << format_double(a.f) << ", p = " << format_double(a.p)
              << '\n';
  } catch (const DegenerateSample& e) {
    std::cout << "daily rmsle anova skipped: " << e.what() << '\n';
  }
}

void write_reports(const fs::path& out, const std::vector<ResultRow>& results, const std::vector<RunResult>& runs,
                   RunManifest& manifest) {
  write_results_csv(out / "results.csv", results);
  write_daily_csv(out / "daily.csv", aggregate_daily(runs));
  write_groups_csv(out / "groups.csv", aggregate_groups(runs));
  for (const char* f : {"results.csv", "daily.csv", "groups.csv"}) manifest.outputs.push_back((out / f).string());
}

void finish_manifest(const fs::path& out, RunManifest& manifest) {
  manifest.finished = utc_timestamp();
  manifest.outputs.push_back((out / "manifest.json").string());
  write_manifest(out / "manifest.json", manifest);
}

EpochCallback epoch_logger(bool verbose, std::uint64_t seed_label) {
  if (!verbose) return {};
  static std::mutex mu;
  return [seed_label](const EpochRecord& r) {
    std::lock_guard lock(mu);
    std::cerr << "seed " << seed_label << " epoch " << r.epoch << " loss " << format_double(r.train_loss)
              << " val_rmsle " << format_double(r.val_rmsle) << '\n';
  };
}

struct IngestOptions {
  std::string data_dir, out, split = "favorita";
};

int cmd_ingest(const IngestOptions& o) {
  IngestReport ir;
  const auto raw = ingest(o.data_dir, &ir);
  std::optional<SplitSpec> split;
  if (o.split == "favorita") split = SplitSpec::favorita();
  else if (o.split != "none") throw ConfigError("--split must be 'favorita' or 'none'");
  DensifyReport dr;
  const auto cube = densify(raw, split, &dr);
  save_cube(o.out, cube);
  std::cout << "stores " << cube.n_stores() << "\nitems " << cube.n_items() << "\ndays " << cube.n_days << "\nfirst_day "
            << format_date(cube.date_of(0)) << "\nlast_day " << format_date(cube.date_of(cube.n_days - 1))
            << "\nfill_fraction " << format_double(dr.fill_fraction) << "\nclamped_cells " << dr.clamped << '\n';
  return kOk;
}

struct SynthOptions {
  std::string config, out;
};

int cmd_synth(const SynthOptions& o) {
  SynthConfig sc;
  if (!o.config.empty()) {
    require_file(o.config, "config file");
    sc = parse_synth_config(KeyValueFile::load(o.config));
  }
  const auto cube = synth_generate(sc);
  save_cube(o.out, cube);
  std::cout << "stores " << cube.n_stores() << "\nitems " << cube.n_items() << "\ndays " << cube.n_days << "\ntrain_end "
            << cube.split.train_end << '\n';
  return kOk;
}

struct TrainOptions {
  std::string cube, model = "seq2seq", config, out = "out";
  std::uint64_t seed = 1;
  std::size_t runs = 5;
  bool no_trick = false;
  bool verbose = false;
};

int cmd_train(const TrainOptions& o) {
  RunManifest manifest;
  manifest.started = utc_timestamp();
  manifest.command = "train --model " + o.model;
  const auto cube = open_cube(o.cube);
  const auto variant = parse_variant(o.model);
  RunConfig rc = load_run_config(o.config);
  if (o.no_trick) rc.train.random_anchor = false;
  rc.model = configure_variant(rc.model, variant);
  const fs::path out(o.out);
  fs::create_directories(out);
  const auto periods = evaluation_periods(cube.split);
  const auto runs = run_replicas<RunResult>(o.runs, replica_threads(), [&](std::size_t k) {
    const std::uint64_t seed = o.seed + k;
    const fs::path ckpt = out / ("run-" + std::to_string(seed) + ".ckpt");
    auto r = run_once(
        variant, rc.model, rc.train, cube, seed, periods,
        [&](const NamedParameters& p, std::string_view magic, std::uint64_t digest) {
          std::ofstream f(ckpt, std::ios::binary | std::ios::trunc);
          if (!f) throw std::runtime_error("cannot write checkpoint '" + ckpt.string() + "'");
          write_checkpoint(f, magic, digest, p);
        },
        epoch_logger(o.verbose, seed));
    std::ofstream(fs::path(ckpt).replace_extension(".cfg")) << to_config_text(rc);
    return r;
  });
  for (const auto& r : runs) {
    manifest.seeds.push_back(r.seed);
    const auto ckpt = out / ("run-" + std::to_string(r.seed) + ".ckpt");
    manifest.outputs.push_back(ckpt.string());
    manifest.outputs.push_back(fs::path(ckpt).replace_extension(".cfg").string());
    std::cout << "seed " << r.seed << ": " << r.state.epoch << " epochs, best validation rmsle "
              << format_double(r.state.best_val) << " at epoch " << r.state.best_epoch << '\n';
  }
  const std::string cfg_name = rc.model.history_len.to_string() + (rc.train.random_anchor ? "/trick" : "/no-trick");
  const auto results = aggregate_results(runs, variant_name(variant), cfg_name);
  print_results(results);
  manifest.config_digest = config_text_digest(rc);
  manifest.data_digest = file_digest(o.cube);
  write_reports(out, results, runs, manifest);
  finish_manifest(out, manifest);
  return kOk;
}

struct EvaluateOptions {
  std::string cube, config, period = "all", out = "out";
  std::vector<std::string> checkpoints;
  bool baselines = false;
  std::uint64_t seed = 1;
};

int cmd_evaluate(const EvaluateOptions& o) {
  RunManifest manifest;
  manifest.started = utc_timestamp();
  manifest.command = "evaluate --period " + o.period;
  const auto cube = open_cube(o.cube);
  const auto periods = parse_periods(o.period);
  const fs::path out(o.out);
  std::vector<RunResult> runs;
  std::string model_name, cfg_name;
  RunConfig rc;
  for (const auto& path : o.checkpoints) {
    require_file(path, "checkpoint");
    const std::string cfg_path = o.config.empty() ? fs::path(path).replace_extension(".cfg").string() : o.config;
    rc = load_run_config(cfg_path);
    const std::string magic = checkpoint_magic(path);
    ModelVariant variant;
    if (magic == TransformerModel::magic()) variant = ModelVariant::transformer;
    else if (magic == Seq2SeqModel::magic()) variant = ModelVariant::seq2seq;
    else throw FormatError("'" + path + "' is not a checkpoint");
    model_name = variant == ModelVariant::transformer ? "transformer" : "seq2seq";
    cfg_name = rc.model.history_len.to_string();
    RunResult r;
    with_model(variant, rc.model, ModelInputs::from(cube), 0, [&](auto& model) {
      load_checkpoint(path, model);
      r.periods = evaluate_model(model, cube, periods, rc.train.male_without_sqrt);
    });
    runs.push_back(std::move(r));
    manifest.config_digest = config_text_digest(rc);
  }
  auto results = aggregate_results(runs, model_name, cfg_name);
  if (o.baselines) {
    const auto b = baseline_rows(cube, periods, rc.train, o.seed);
    results.insert(results.end(), b.begin(), b.end());
    manifest.seeds.push_back(o.seed);
  }
  print_results(results);
  print_daily_anova(runs);
  manifest.data_digest = file_digest(o.cube);
  write_reports(out, results, runs, manifest);
  finish_manifest(out, manifest);
  return kOk;
}

struct AblateOptions {
  std::string cube, sweep, model = "seq2seq", config, out = "out";
  std::uint64_t seed = 1;
  std::size_t runs = 5;
};

int cmd_ablate(const AblateOptions& o) {
  RunManifest manifest;
  manifest.started = utc_timestamp();
  manifest.command = "ablate --sweep " + o.sweep + " --model " + o.model;
  const auto cube = open_cube(o.cube);
  const auto variant = parse_variant(o.model);
  const RunConfig rc = load_run_config(o.config);
  std::vector<AblationConfig> configs;
  if (o.sweep == "trick") {
    configs = sweep_trick(rc.model, rc.train);
  } else if (o.sweep == "length") {
    if (variant == ModelVariant::transformer) throw ConfigError("the length sweep needs a recurrent model");
    configs = sweep_length(rc.model, rc.train);
  } else {
    throw ConfigError("--sweep must be 'trick' or 'length'");
  }
  const auto rep = ablate(configs, variant, cube, o.runs, o.seed);
  const fs::path out(o.out);
  write_ablation_csv(out / "ablation.csv", rep);
  for (const auto& r : rep.rows) {
    std::cout << "period " << r.period << "  " << r.config << "  " << r.metric << " = " << format_double(r.mean)
              << " +/- " << format_double(r.std);
    if (r.config != rep.reference) {
      std::cout << "  t = " << format_double(r.t) << ", p = " << format_double(r.p)
                << (r.significant ? "  significant" : "");
    }
    std::cout << '\n';
  }
  for (std::size_t k = 0; k < o.runs; ++k) manifest.seeds.push_back(o.seed + k);
  manifest.config_digest = config_text_digest(rc);
  manifest.data_digest = file_digest(o.cube);
  manifest.outputs.push_back((out / "ablation.csv").string());
  finish_manifest(out, manifest);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-series sales forecasting with recurrent and attention models"};
  app.require_subcommand(1);

  IngestOptions io;
  auto* ingest_cmd = app.add_subcommand("ingest", "Build a cube file from the raw CSV tables");
  ingest_cmd->add_option("--data-dir", io.data_dir, "Directory holding train.csv and the covariate tables")->required();
  ingest_cmd->add_option("--out", io.out, "Cube file to write")->required();
  ingest_cmd->add_option("--split", io.split, "Split layout: favorita or none")->capture_default_str();

  SynthOptions so;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic cube");
  synth_cmd->add_option("--config", so.config, "Synthetic panel config file");
  synth_cmd->add_option("--out", so.out, "Cube file to write")->required();

  TrainOptions to;
  auto* train_cmd = app.add_subcommand("train", "Train seeded replicas and report test metrics");
  train_cmd->add_option("--cube", to.cube, "Cube file")->required();
  train_cmd->add_option("--model", to.model, "seq2seq, seq2seq-trimmed or transformer")->capture_default_str();
  train_cmd->add_option("--config", to.config, "Run config file");
  train_cmd->add_option("--seed", to.seed, "Seed of the first run")->capture_default_str();
  train_cmd->add_option("--runs", to.runs, "Number of seeded runs")->capture_default_str()->check(CLI::PositiveNumber);
  train_cmd->add_flag("--no-trick", to.no_trick, "Train every batch at the last training anchor");
  train_cmd->add_option("--out", to.out, "Output directory")->capture_default_str();
  train_cmd->add_flag("-v,--verbose", to.verbose, "Log every epoch to stderr");

  EvaluateOptions eo;
  auto* eval_cmd = app.add_subcommand("evaluate", "Score checkpoints on test periods");
  eval_cmd->add_option("--cube", eo.cube, "Cube file")->required();
  eval_cmd->add_option("--checkpoint", eo.checkpoints, "Checkpoint file (repeat for several runs)")->required();
  eval_cmd->add_option("--config", eo.config, "Run config (default: the .cfg next to each checkpoint)");
  eval_cmd->add_option("--period", eo.period, "1, 2, 3, all or val")->capture_default_str();
  eval_cmd->add_flag("--baselines", eo.baselines, "Add random and average baseline rows");
  eval_cmd->add_option("--seed", eo.seed, "Seed for the random baseline")->capture_default_str();
  eval_cmd->add_option("--out", eo.out, "Output directory")->capture_default_str();

  AblateOptions ao;
  auto* ablate_cmd = app.add_subcommand("ablate", "Compare configurations with Welch t-tests");
  ablate_cmd->add_option("--cube", ao.cube, "Cube file")->required();
  ablate_cmd->add_option("--sweep", ao.sweep, "trick or length")->required();
  ablate_cmd->add_option("--model", ao.model, "Model for the sweep")->capture_default_str();
  ablate_cmd->add_option("--config", ao.config, "Run config file");
  ablate_cmd->add_option("--seed", ao.seed, "Seed of the first run")->capture_default_str();
  ablate_cmd->add_option("--runs", ao.runs, "Runs per configuration")->capture_default_str()->check(CLI::PositiveNumber);
  ablate_cmd->add_option("--out", ao.out, "Output directory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    if (*ingest_cmd) return cmd_ingest(io);
    if (*synth_cmd) return cmd_synth(so);
    if (*train_cmd) return cmd_train(to);
    if (*eval_cmd) return cmd_evaluate(eo);
    if (*ablate_cmd) return cmd_ablate(ao);
  } catch (const MissingInputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const MissingFile& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kMissing;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const DigestMismatch& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDigest;
  } catch (const DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << '\n';
    return kDiverged;
  } catch (const IngestError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const FormatError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const WindowError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kFailure;
  }
  return kFailure;
}
