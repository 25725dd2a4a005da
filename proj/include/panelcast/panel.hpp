#pragma once

// Dense store x item x day panel, its split definition, and the cached
// binary cube format.
//
// Cube file layout (all integers and floats little-endian):
//
//   char[4]  magic "PCUB"
//   u32      version (1)
//   i32      origin: days since 1970-01-01 of day index 0
//   u32      n_stores, n_items, n_days, store_vocab, item_vocab
//   u8       has_evaluation
//   u32 x 11 train_end, validation first/last, P1 first/last, P2 first/last,
//            P3 first/last, min_anchor, horizon
//   i64      store_ids[n_stores]
//   i64      item_ids[n_items]
//   u32      store_embed[n_stores]
//   u32      item_embed[n_items]
//   u8       perishable[n_items]
//   u32      n_store_static; names (u32 len + bytes) each;
//            f64 store_static[n_stores * n_store_static]
//   u32      n_item_static; names; f64 item_static[n_items * n_item_static]
//   u32      n_channels; per channel: u32 len + name bytes, u8 scope
//            (0 day, 1 store-day, 2 series-day), u8 known_future, f64 mean,
//            f64 stddev, u64 count, f64 values[count]
//   f64      target[n_stores * n_items * n_days]   (log1p of clamped sales)
//
// Multi-dimensional blocks are row-major with day innermost.

#include <array>
#include <bit>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace panelcast {

// ---- calendar ------------------------------------------------------------

using Date = std::chrono::year_month_day;

inline Date make_date(int y, unsigned m, unsigned d) {
  return Date{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
}

inline const Date kFavoritaOrigin = make_date(2013, 1, 1);

inline std::int64_t days_since_epoch(const Date& d) {
  return std::chrono::sys_days{d}.time_since_epoch().count();
}

inline Date date_from_epoch_days(std::int64_t n) {
  return Date{std::chrono::sys_days{std::chrono::days{n}}};
}

// Day index of `d` relative to `origin`; may be negative.
inline std::int64_t day_offset(const Date& origin, const Date& d) { return days_since_epoch(d) - days_since_epoch(origin); }

inline std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()), static_cast<unsigned>(d.month()),
                static_cast<unsigned>(d.day()));
  return buf;
}

// Parses YYYY-MM-DD; returns false on malformed or impossible dates.
inline bool parse_date(std::string_view s, Date& out) {
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
  int y = 0;
  unsigned m = 0, d = 0;
  for (std::size_t i : {0u, 1u, 2u, 3u}) {
    if (s[i] < '0' || s[i] > '9') return false;
    y = y * 10 + (s[i] - '0');
  }
  for (std::size_t i : {5u, 6u}) {
    if (s[i] < '0' || s[i] > '9') return false;
    m = m * 10 + static_cast<unsigned>(s[i] - '0');
  }
  for (std::size_t i : {8u, 9u}) {
    if (s[i] < '0' || s[i] > '9') return false;
    d = d * 10 + static_cast<unsigned>(s[i] - '0');
  }
  out = make_date(y, m, d);
  return out.ok();
}

// ---- splits ----------------------------------------------------------------

// Inclusive day-index range.
struct DaySpan {
  std::size_t first = 0;
  std::size_t last = 0;
  std::size_t length() const { return last + 1 - first; }
  bool contains(std::size_t d) const { return d >= first && d <= last; }
  friend bool operator==(const DaySpan&, const DaySpan&) = default;
};

enum class EvalPeriod { validation, p1, p2, p3 };

inline std::string period_name(EvalPeriod p) {
  switch (p) {
    case EvalPeriod::validation: return "val";
    case EvalPeriod::p1: return "1";
    case EvalPeriod::p2: return "2";
    case EvalPeriod::p3: return "3";
  }
  return "?";
}

struct SplitSpec {
  std::size_t train_end = 0;  // last day usable for fitting, inclusive
  DaySpan validation;
  std::array<DaySpan, 3> test{};
  std::size_t min_anchor = 0;  // earliest admissible training anchor
  std::size_t horizon = 16;
  bool has_evaluation = true;

  // Spans used in the Favorita study, as day indices from 2013-01-01.
  static SplitSpec favorita() {
    const auto idx = [](int y, unsigned m, unsigned d) {
      return static_cast<std::size_t>(day_offset(kFavoritaOrigin, make_date(y, m, d)));
    };
    SplitSpec s;
    s.train_end = idx(2017, 5, 27);
    s.validation = {idx(2017, 6, 13), idx(2017, 6, 28)};
    s.test = {DaySpan{idx(2017, 6, 29), idx(2017, 7, 14)}, DaySpan{idx(2017, 7, 15), idx(2017, 7, 30)},
              DaySpan{idx(2017, 7, 31), idx(2017, 8, 15)}};
    s.min_anchor = idx(2013, 10, 29);
    s.horizon = 16;
    return s;
  }

  // Same shape as the Favorita layout, anchored to the end of an n-day panel:
  // three test periods, a validation span, and an equally long gap before it.
  static SplitSpec trailing(std::size_t n_days, std::size_t min_anchor, std::size_t horizon = 16) {
    if (n_days < 5 * horizon + 1) throw std::invalid_argument("panel too short for a trailing split");
    SplitSpec s;
    s.horizon = horizon;
    const std::size_t end = n_days - 1;
    s.test[2] = {end - horizon + 1, end};
    s.test[1] = {end - 2 * horizon + 1, end - horizon};
    s.test[0] = {end - 3 * horizon + 1, end - 2 * horizon};
    s.validation = {end - 4 * horizon + 1, end - 3 * horizon};
    s.train_end = end - 5 * horizon;
    s.min_anchor = min_anchor;
    return s;
  }

  // Whole panel is training data; no evaluation windows.
  static SplitSpec training_only(std::size_t n_days, std::size_t min_anchor = 0, std::size_t horizon = 16) {
    SplitSpec s;
    s.train_end = n_days ? n_days - 1 : 0;
    s.min_anchor = min_anchor;
    s.horizon = horizon;
    s.has_evaluation = false;
    return s;
  }

  const DaySpan& span(EvalPeriod p) const {
    if (!has_evaluation) throw std::logic_error("split has no evaluation periods");
    switch (p) {
      case EvalPeriod::validation: return validation;
      case EvalPeriod::p1: return test[0];
      case EvalPeriod::p2: return test[1];
      case EvalPeriod::p3: return test[2];
    }
    throw std::logic_error("bad period");
  }

  // Forecast origin: the day before the evaluated span.
  std::size_t anchor_for(EvalPeriod p) const { return span(p).first - 1; }

  // Training anchors must leave room for a full target window inside the training span.
  std::size_t max_train_anchor() const { return train_end - horizon; }

  void validate(std::size_t n_days) const {
    if (horizon == 0) throw std::invalid_argument("split horizon must be >= 1");
    if (train_end >= n_days) throw std::invalid_argument("train end beyond panel");
    if (train_end < horizon || min_anchor > max_train_anchor()) {
      throw std::invalid_argument("empty training anchor range [" + std::to_string(min_anchor) + ", " +
                                  std::to_string(train_end < horizon ? 0 : max_train_anchor()) + "]");
    }
    if (!has_evaluation) return;
    std::size_t prev = train_end;
    for (const auto* s : {&validation, &test[0], &test[1], &test[2]}) {
      if (s->first <= prev || s->last < s->first) throw std::invalid_argument("split spans overlap or are unordered");
      if (s->length() != horizon) throw std::invalid_argument("evaluation span length differs from horizon");
      prev = s->last;
    }
    if (prev >= n_days) throw std::invalid_argument("evaluation spans extend beyond the panel");
  }

  friend bool operator==(const SplitSpec&, const SplitSpec&) = default;
};

// ---- cube ------------------------------------------------------------------

enum class ChannelScope : std::uint8_t { day = 0, store_day = 1, series_day = 2 };

// A time-dependent covariate, stored already centred and scaled.
struct Channel {
  std::string name;
  ChannelScope scope = ChannelScope::day;
  bool known_future = false;
  double mean = 0.0;
  double stddev = 1.0;
  std::vector<double> values;
  friend bool operator==(const Channel&, const Channel&) = default;
};

struct PanelCube {
  std::int64_t origin = days_since_epoch(kFavoritaOrigin);
  std::size_t n_days = 0;
  std::vector<std::int64_t> store_ids;
  std::vector<std::int64_t> item_ids;
  std::vector<std::uint32_t> store_embed;  // embedding row per store; store_vocab-1 is "unknown"
  std::vector<std::uint32_t> item_embed;
  std::uint32_t store_vocab = 1;
  std::uint32_t item_vocab = 1;
  std::vector<std::uint8_t> perishable;  // per item
  std::vector<std::string> store_static_names;
  std::vector<double> store_static;  // [store][feature]
  std::vector<std::string> item_static_names;
  std::vector<double> item_static;  // [item][feature]
  std::vector<Channel> channels;
  std::vector<double> target;  // [store][item][day], log1p(sales)
  SplitSpec split;

  std::size_t n_stores() const { return store_ids.size(); }
  std::size_t n_items() const { return item_ids.size(); }
  std::size_t n_series() const { return n_stores() * n_items(); }
  std::size_t n_static() const { return store_static_names.size() + item_static_names.size(); }

  std::size_t cell(std::size_t store, std::size_t item, std::size_t day) const {
    return (store * n_items() + item) * n_days + day;
  }
  double target_at(std::size_t store, std::size_t item, std::size_t day) const { return target[cell(store, item, day)]; }

  double channel_at(const Channel& c, std::size_t store, std::size_t item, std::size_t day) const {
    switch (c.scope) {
      case ChannelScope::day: return c.values[day];
      case ChannelScope::store_day: return c.values[store * n_days + day];
      case ChannelScope::series_day: return c.values[cell(store, item, day)];
    }
    return 0.0;
  }

  std::size_t known_future_channels() const {
    std::size_t n = 0;
    for (const auto& c : channels) n += c.known_future ? 1 : 0;
    return n;
  }

  Date date_of(std::size_t day) const { return date_from_epoch_days(origin + static_cast<std::int64_t>(day)); }

  // Throws if sizes disagree with the declared dimensions.
  void check_consistency() const {
    const auto fail = [](const std::string& what) { throw std::runtime_error("inconsistent cube: " + what); };
    if (target.size() != n_series() * n_days) fail("target size");
    if (store_embed.size() != n_stores() || item_embed.size() != n_items()) fail("embedding index size");
    if (perishable.size() != n_items()) fail("perishable size");
    if (store_static.size() != n_stores() * store_static_names.size()) fail("store static size");
    if (item_static.size() != n_items() * item_static_names.size()) fail("item static size");
    for (auto e : store_embed) if (e >= store_vocab) fail("store embedding index");
    for (auto e : item_embed) if (e >= item_vocab) fail("item embedding index");
    for (const auto& c : channels) {
      const std::size_t want = c.scope == ChannelScope::day         ? n_days
                               : c.scope == ChannelScope::store_day ? n_stores() * n_days
                                                                    : n_series() * n_days;
      if (c.values.size() != want) fail("channel '" + c.name + "' size");
    }
  }

  friend bool operator==(const PanelCube&, const PanelCube&) = default;
};

// ---- binary IO -------------------------------------------------------------

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace io {

static_assert(std::endian::native == std::endian::little, "cube and checkpoint IO assume a little-endian host");

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
void put_span(std::ostream& os, const std::vector<T>& v) {
  if (!v.empty()) os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw FormatError("unexpected end of file");
  return v;
}

template <typename T>
std::vector<T> get_vector(std::istream& is, std::size_t n) {
  std::vector<T> v(n);
  if (n && !is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(T)))) {
    throw FormatError("unexpected end of file");
  }
  return v;
}

inline std::string get_string(std::istream& is) {
  const auto n = get<std::uint32_t>(is);
  if (n > (1u << 20)) throw FormatError("implausible string length");
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw FormatError("unexpected end of file");
  return s;
}

}  // namespace io

inline constexpr std::uint32_t kCubeVersion = 1;

inline void write_cube(std::ostream& os, const PanelCube& c) {
  using namespace io;
  c.check_consistency();
  os.write("PCUB", 4);
  put<std::uint32_t>(os, kCubeVersion);
  put<std::int32_t>(os, static_cast<std::int32_t>(c.origin));
  for (std::size_t v : {c.n_stores(), c.n_items(), c.n_days}) put<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  put<std::uint32_t>(os, c.store_vocab);
  put<std::uint32_t>(os, c.item_vocab);
  const auto& s = c.split;
  put<std::uint8_t>(os, s.has_evaluation ? 1 : 0);
  for (std::size_t v : {s.train_end, s.validation.first, s.validation.last, s.test[0].first, s.test[0].last,
                        s.test[1].first, s.test[1].last, s.test[2].first, s.test[2].last, s.min_anchor, s.horizon}) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  }
  put_span(os, c.store_ids);
  put_span(os, c.item_ids);
  put_span(os, c.store_embed);
  put_span(os, c.item_embed);
  put_span(os, c.perishable);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.store_static_names.size()));
  for (const auto& n : c.store_static_names) put_string(os, n);
  put_span(os, c.store_static);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.item_static_names.size()));
  for (const auto& n : c.item_static_names) put_string(os, n);
  put_span(os, c.item_static);
  put<std::uint32_t>(os, static_cast<std::uint32_t>(c.channels.size()));
  for (const auto& ch : c.channels) {
    put_string(os, ch.name);
    put<std::uint8_t>(os, static_cast<std::uint8_t>(ch.scope));
    put<std::uint8_t>(os, ch.known_future ? 1 : 0);
    put<double>(os, ch.mean);
    put<double>(os, ch.stddev);
    put<std::uint64_t>(os, ch.values.size());
    put_span(os, ch.values);
  }
  put_span(os, c.target);
}

inline PanelCube read_cube(std::istream& is) {
  using namespace io;
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "PCUB", 4) != 0) throw FormatError("not a cube file (bad magic)");
  if (const auto v = get<std::uint32_t>(is); v != kCubeVersion) {
    throw FormatError("unsupported cube version " + std::to_string(v));
  }
  PanelCube c;
  c.origin = get<std::int32_t>(is);
  const auto n_stores = get<std::uint32_t>(is);
  const auto n_items = get<std::uint32_t>(is);
  c.n_days = get<std::uint32_t>(is);
  c.store_vocab = get<std::uint32_t>(is);
  c.item_vocab = get<std::uint32_t>(is);
  auto& s = c.split;
  s.has_evaluation = get<std::uint8_t>(is) != 0;
  std::array<std::size_t, 11> f{};
  for (auto& v : f) v = get<std::uint32_t>(is);
  s.train_end = f[0];
  s.validation = {f[1], f[2]};
  s.test = {DaySpan{f[3], f[4]}, DaySpan{f[5], f[6]}, DaySpan{f[7], f[8]}};
  s.min_anchor = f[9];
  s.horizon = f[10];
  c.store_ids = get_vector<std::int64_t>(is, n_stores);
  c.item_ids = get_vector<std::int64_t>(is, n_items);
  c.store_embed = get_vector<std::uint32_t>(is, n_stores);
  c.item_embed = get_vector<std::uint32_t>(is, n_items);
  c.perishable = get_vector<std::uint8_t>(is, n_items);
  const auto n_ss = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_ss; ++i) c.store_static_names.push_back(get_string(is));
  c.store_static = get_vector<double>(is, std::size_t{n_stores} * n_ss);
  const auto n_is = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_is; ++i) c.item_static_names.push_back(get_string(is));
  c.item_static = get_vector<double>(is, std::size_t{n_items} * n_is);
  const auto n_ch = get<std::uint32_t>(is);
  for (std::uint32_t i = 0; i < n_ch; ++i) {
    Channel ch;
    ch.name = get_string(is);
    const auto scope = get<std::uint8_t>(is);
    if (scope > 2) throw FormatError("bad channel scope");
    ch.scope = static_cast<ChannelScope>(scope);
    ch.known_future = get<std::uint8_t>(is) != 0;
    ch.mean = get<double>(is);
    ch.stddev = get<double>(is);
    ch.values = get_vector<double>(is, get<std::uint64_t>(is));
    c.channels.push_back(std::move(ch));
  }
  c.target = get_vector<double>(is, std::size_t{n_stores} * n_items * c.n_days);
  try {
    c.check_consistency();
  } catch (const std::runtime_error& e) {
    throw FormatError(e.what());
  }
  return c;
}

inline void save_cube(const std::string& path, const PanelCube& c) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write cube file '" + path + "'");
  write_cube(f, c);
  if (!f) throw std::runtime_error("write failed for '" + path + "'");
}

inline PanelCube load_cube(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open cube file '" + path + "'");
  return read_cube(f);
}

}  // namespace panelcast
