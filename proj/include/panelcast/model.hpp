#pragma once

// Pieces shared by the forecasting models: input dimensions, the model
// concept, parameter snapshots and the checkpoint file format.
//
// Checkpoint layout (little-endian):
//   char[4] magic ("PCS2" recurrent, "PCTF" transformer)
//   u32     version (1)
//   u64     config digest (FNV-1a of ModelConfig::canonical())
//   u32     block count
//   blocks sorted by name: u32 name length, name bytes, u32 rank,
//           u64 dims[rank], f64 values[product(dims)]

#include <algorithm>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "panelcast/batch.hpp"
#include "panelcast/config.hpp"
#include "panelcast/layers.hpp"
#include "panelcast/panel.hpp"

namespace panelcast {

// Data-dependent sizes a model needs at construction.
struct ModelInputs {
  std::size_t encoder_channels = 1;  // log sales + covariates
  std::size_t static_dim = 0;
  std::size_t store_vocab = 1;
  std::size_t item_vocab = 1;
  std::size_t future_dim = 0;  // known-future covariates

  static ModelInputs from(const PanelCube& cube) {
    return {1 + cube.channels.size(), cube.n_static(), cube.store_vocab, cube.item_vocab, cube.known_future_channels()};
  }
};

enum class ForwardMode { train, infer };

template <typename M>
concept ForecastModel = requires(const M& m, const WindowBatch& batch, std::size_t anchor) {
  { m.forward(batch, ForwardMode::train) } -> std::same_as<Tensor>;
  { m.parameters() } -> std::same_as<NamedParameters>;
  { m.config() } -> std::convertible_to<const ModelConfig&>;
  { m.history_for(anchor) } -> std::convertible_to<std::size_t>;
  { M::magic() } -> std::convertible_to<std::string_view>;
};

inline NamedParameters sorted_by_name(NamedParameters p) {
  std::sort(p.begin(), p.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  return p;
}

// Deep copy of parameter values, used to keep the best checkpoint in memory.
using ParameterSnapshot = std::vector<std::vector<double>>;

inline ParameterSnapshot snapshot(const NamedParameters& params) {
  ParameterSnapshot s;
  for (const auto& [name, t] : params) s.push_back(t.to_vector());
  return s;
}

inline void restore(NamedParameters& params, const ParameterSnapshot& s) {
  if (s.size() != params.size()) throw std::invalid_argument("snapshot does not match parameter list");
  for (std::size_t k = 0; k < s.size(); ++k) {
    auto dst = params[k].second.mutable_data();
    if (dst.size() != s[k].size()) throw std::invalid_argument("snapshot shape mismatch for " + params[k].first);
    std::copy(s[k].begin(), s[k].end(), dst.begin());
  }
}

class DigestMismatch : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_checkpoint(std::ostream& os, std::string_view magic, std::uint64_t digest, const NamedParameters& params) {
  using namespace io;
  os.write(magic.data(), 4);
  put<std::uint32_t>(os, kCheckpointVersion);
  put<std::uint64_t>(os, digest);
  const auto sorted = sorted_by_name(params);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(sorted.size()));
  for (const auto& [name, t] : sorted) {
    put_string(os, name);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) put<std::uint64_t>(os, d);
    const auto v = t.data();
    os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
}

// Reads blocks into the model's existing parameters; every name and shape
// must match, and the digest must equal `expected_digest`.
inline void read_checkpoint(std::istream& is, std::string_view magic, std::uint64_t expected_digest, NamedParameters params) {
  using namespace io;
  char m[4];
  if (!is.read(m, 4) || std::memcmp(m, magic.data(), 4) != 0) {
    throw FormatError("checkpoint magic is not '" + std::string(magic) + "'");
  }
  if (const auto v = get<std::uint32_t>(is); v != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(v));
  }
  if (const auto d = get<std::uint64_t>(is); d != expected_digest) {
    throw DigestMismatch("checkpoint config digest does not match the supplied model config");
  }
  std::map<std::string, Tensor> by_name(params.begin(), params.end());
  const auto n = get<std::uint32_t>(is);
  if (n != by_name.size()) throw FormatError("checkpoint holds " + std::to_string(n) + " blocks, model has " + std::to_string(by_name.size()));
  for (std::uint32_t k = 0; k < n; ++k) {
    const auto name = get_string(is);
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError("unexpected parameter block '" + name + "'");
    const auto rank = get<std::uint32_t>(is);
    Shape shape;
    for (std::uint32_t r = 0; r < rank; ++r) shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(is)));
    if (shape != it->second.shape()) {
      throw FormatError("shape mismatch for '" + name + "': file " + shape_str(shape) + ", model " + shape_str(it->second.shape()));
    }
    const auto values = get_vector<double>(is, numel_of(shape));
    auto dst = it->second.mutable_data();
    std::copy(values.begin(), values.end(), dst.begin());
  }
}

template <ForecastModel M>
void save_checkpoint(const std::string& path, const M& model) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write checkpoint '" + path + "'");
  write_checkpoint(f, M::magic(), config_digest(model.config()), model.parameters());
}

template <ForecastModel M>
void load_checkpoint(const std::string& path, M& model) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  read_checkpoint(f, M::magic(), config_digest(model.config()), model.parameters());
}

// Magic bytes of a checkpoint file, or empty if unreadable.
inline std::string checkpoint_magic(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  char m[4];
  if (!f.read(m, 4)) return {};
  return std::string(m, 4);
}

}  // namespace panelcast
