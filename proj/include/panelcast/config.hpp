#pragma once

// Model and training configuration plus the key = value text format used for
// config files.

#include <cctype>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>

namespace panelcast {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Number of encoder days fed to a model; "full" means every day up to the anchor.
class HistoryLength {
 public:
  static HistoryLength full() { return HistoryLength(); }
  static HistoryLength days(std::size_t n) {
    HistoryLength h;
    h.full_ = false;
    h.days_ = n;
    return h;
  }

  bool is_full() const { return full_; }
  std::size_t days() const { return days_; }

  // Encoder length for a window ending at `anchor` (day indices start at 0).
  std::size_t resolve(std::size_t anchor) const { return full_ ? anchor + 1 : days_; }

  HistoryLength capped(std::size_t cap) const {
    if (full_ || days_ > cap) return days(cap);
    return *this;
  }

  std::string to_string() const { return full_ ? "full" : std::to_string(days_); }

  static HistoryLength parse(std::string_view text) {
    if (text == "full") return full();
    std::size_t n = 0;
    auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
    if (ec != std::errc{} || p != text.data() + text.size()) {
      throw ConfigError("history_len must be 'full' or a non-negative integer, got '" + std::string(text) + "'");
    }
    return days(n);
  }

  friend bool operator==(const HistoryLength&, const HistoryLength&) = default;

 private:
  HistoryLength() = default;
  bool full_ = true;
  std::size_t days_ = 0;
};

enum class ModelKind { seq2seq, transformer };

struct ModelConfig {
  HistoryLength history_len = HistoryLength::full();
  std::size_t horizon = 16;
  // recurrent model
  std::size_t hidden_dim = 32;
  std::size_t embed_dim = 4;
  std::size_t cond_hidden_dim = 32;
  std::size_t head_hidden_dim = 16;
  // transformer
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t ff_dim = 128;
  std::size_t history_cap = 200;
  // Feed known-future covariates to the decoder alongside the previous prediction.
  bool future_covariates = false;
  // Test hook: when false the decoder gets zeros instead of its last prediction.
  bool autoregressive_feedback = true;

  void validate() const {
    if (horizon < 1) throw ConfigError("horizon must be >= 1");
    if (hidden_dim == 0 || cond_hidden_dim == 0 || head_hidden_dim == 0) throw ConfigError("layer sizes must be > 0");
    if (d_model == 0 || d_model % 2 != 0) throw ConfigError("d_model must be even and > 0");
    if (heads == 0 || d_model % heads != 0) throw ConfigError("d_model must be divisible by heads");
  }

  // Canonical text; the digest of this identifies compatible checkpoints.
  std::string canonical() const {
    std::ostringstream os;
    os << "history_len=" << history_len.to_string() << "\nhorizon=" << horizon << "\nhidden_dim=" << hidden_dim
       << "\nembed_dim=" << embed_dim << "\ncond_hidden_dim=" << cond_hidden_dim
       << "\nhead_hidden_dim=" << head_hidden_dim << "\nd_model=" << d_model << "\nheads=" << heads
       << "\nblocks=" << blocks << "\nff_dim=" << ff_dim << "\nhistory_cap=" << history_cap
       << "\nfuture_covariates=" << future_covariates << "\n";
    return os.str();
  }
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t batches_per_epoch = 20;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 5.0;
  std::size_t patience = 10;
  bool random_anchor = true;
  // Average baseline constant computed in log space (default) or linear space.
  bool average_in_log_space = true;
  // Non-paper variant of MALE without the outer square root.
  bool male_without_sqrt = false;

  void validate() const {
    if (epochs == 0 || batches_per_epoch == 0 || batch_size == 0) throw ConfigError("epochs, batches and batch size must be > 0");
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be > 0");
  }
};

// Shortest round-trip decimal form.
inline std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::uint64_t config_digest(const ModelConfig& cfg) { return fnv1a64(cfg.canonical()); }

// Flat "key = value" text with '#' comments.
class KeyValueFile {
 public:
  static KeyValueFile parse(std::string_view text, const std::string& origin = "<config>") {
    KeyValueFile kv;
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string_view::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
      }
      const std::string key(trim(trimmed.substr(0, eq)));
      if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      if (!kv.values_.emplace(key, std::string(trim(trimmed.substr(eq + 1)))).second) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      }
    }
    return kv;
  }

  static KeyValueFile load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse(ss.str(), path);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::optional<std::string> get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    used_[key] = true;
    return it->second;
  }

  template <typename T>
  void read(const std::string& key, T& out) const {
    auto v = get(key);
    if (!v) return;
    if constexpr (std::is_same_v<T, bool>) {
      if (*v == "true" || *v == "1" || *v == "on") out = true;
      else if (*v == "false" || *v == "0" || *v == "off") out = false;
      else throw ConfigError("key '" + key + "': expected boolean, got '" + *v + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
      out = *v;
    } else {
      T parsed{};
      auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), parsed);
      if (ec != std::errc{} || p != v->data() + v->size()) {
        throw ConfigError("key '" + key + "': cannot parse '" + *v + "'");
      }
      out = parsed;
    }
  }

  // Throws if any key was never read.
  void reject_unused() const {
    for (const auto& [k, v] : values_) {
      if (!used_.count(k)) throw ConfigError("unknown config key '" + k + "'");
    }
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

  std::map<std::string, std::string> values_;
  mutable std::map<std::string, bool> used_;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

inline RunConfig parse_run_config(const KeyValueFile& kv) {
  RunConfig rc;
  auto& m = rc.model;
  auto& t = rc.train;
  if (auto h = kv.get("history_len")) m.history_len = HistoryLength::parse(*h);
  kv.read("horizon", m.horizon);
  kv.read("hidden_dim", m.hidden_dim);
  kv.read("embed_dim", m.embed_dim);
  kv.read("cond_hidden_dim", m.cond_hidden_dim);
  kv.read("head_hidden_dim", m.head_hidden_dim);
  kv.read("d_model", m.d_model);
  kv.read("heads", m.heads);
  kv.read("blocks", m.blocks);
  kv.read("ff_dim", m.ff_dim);
  kv.read("history_cap", m.history_cap);
  kv.read("future_covariates", m.future_covariates);
  kv.read("epochs", t.epochs);
  kv.read("batches_per_epoch", t.batches_per_epoch);
  kv.read("batch_size", t.batch_size);
  kv.read("lr", t.learning_rate);
  kv.read("beta1", t.beta1);
  kv.read("beta2", t.beta2);
  kv.read("adam_epsilon", t.epsilon);
  kv.read("clip_norm", t.clip_norm);
  kv.read("patience", t.patience);
  kv.read("random_anchor", t.random_anchor);
  kv.read("average_in_log_space", t.average_in_log_space);
  kv.read("male_without_sqrt", t.male_without_sqrt);
  kv.reject_unused();
  m.validate();
  t.validate();
  return rc;
}

inline std::string to_config_text(const RunConfig& rc) {
  std::ostringstream os;
  os << rc.model.canonical();
  const auto& t = rc.train;
  os << "epochs=" << t.epochs << "\nbatches_per_epoch=" << t.batches_per_epoch << "\nbatch_size=" << t.batch_size
     << "\nlr=" << format_double(t.learning_rate) << "\nbeta1=" << format_double(t.beta1)
     << "\nbeta2=" << format_double(t.beta2) << "\nadam_epsilon=" << format_double(t.epsilon)
     << "\nclip_norm=" << format_double(t.clip_norm) << "\npatience=" << t.patience << "\nrandom_anchor=" << t.random_anchor
     << "\naverage_in_log_space=" << t.average_in_log_space << "\nmale_without_sqrt=" << t.male_without_sqrt << "\n";
  return os.str();
}

}  // namespace panelcast
