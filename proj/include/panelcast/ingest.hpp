#pragma once

// Favorita CSV ingestion and densification into a PanelCube.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "panelcast/panel.hpp"

namespace panelcast {

class MissingInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IngestError : public std::runtime_error {
 public:
  IngestError(const std::string& file, std::size_t line, const std::string& what)
      : std::runtime_error(file + ":" + std::to_string(line) + ": " + what), file_(file), line_(line) {}
  const std::string& file() const { return file_; }
  std::size_t line() const { return line_; }

 private:
  std::string file_;
  std::size_t line_;
};

struct RawSalesRecord {
  Date date;
  std::int64_t store_nbr = 0;
  std::int64_t item_nbr = 0;
  double unit_sales = 0.0;  // negative values are returns
  bool onpromotion = false;
};

struct StoreMeta {
  std::int64_t store_nbr = 0;
  std::string city, state, type;
  std::int64_t cluster = 0;
};

struct ItemMeta {
  std::int64_t item_nbr = 0;
  std::string family;
  std::int64_t item_class = 0;
  bool perishable = false;
};

struct TransactionRecord {
  Date date;
  std::int64_t store_nbr = 0;
  double transactions = 0.0;
};

struct OilRecord {
  Date date;
  std::optional<double> price;
};

struct HolidayRecord {
  Date date;
  std::string type, locale, locale_name, description;
  bool transferred = false;
};

struct RawTables {
  std::vector<RawSalesRecord> sales;
  std::vector<StoreMeta> stores;
  std::vector<ItemMeta> items;
  std::vector<TransactionRecord> transactions;
  std::vector<OilRecord> oil;
  std::vector<HolidayRecord> holidays;
};

namespace csv {

// Splits one line on commas, honouring double quotes.
inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur.push_back(ch);
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(std::move(cur));
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && p == s.data() + s.size();
}

inline bool parse_bool(std::string_view s, bool& out) {
  if (s == "True" || s == "true" || s == "1") return out = true, true;
  if (s == "False" || s == "false" || s == "0") return out = false, true;
  return false;
}

// Reads the header and each data row of a CSV stream; rows with the wrong
// field count are rejected with their line number.
template <typename RowFn>
std::size_t for_each_row(std::istream& in, const std::string& name, std::string_view header, RowFn&& fn) {
  std::string line;
  if (!std::getline(in, line)) throw IngestError(name, 1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
  if (line != header) throw IngestError(name, 1, "header mismatch: expected '" + std::string(header) + "', got '" + line + "'");
  const auto expected = split_line(header).size();
  std::size_t lineno = 1, rows = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != expected) {
      throw IngestError(name, lineno, "expected " + std::to_string(expected) + " fields, got " + std::to_string(fields.size()));
    }
    fn(fields, lineno);
    ++rows;
  }
  return rows;
}

inline Date need_date(const std::string& s, const std::string& name, std::size_t line) {
  Date d;
  if (!parse_date(s, d)) throw IngestError(name, line, "malformed date '" + s + "'");
  return d;
}

template <typename T>
T need_number(const std::string& s, const std::string& name, std::size_t line, const char* field) {
  T v{};
  if (!parse_number(s, v)) throw IngestError(name, line, std::string("non-numeric ") + field + " '" + s + "'");
  return v;
}

}  // namespace csv

inline std::vector<RawSalesRecord> parse_sales(std::istream& in, const std::string& name = "train.csv") {
  std::vector<RawSalesRecord> out;
  csv::for_each_row(in, name, "id,date,store_nbr,item_nbr,unit_sales,onpromotion", [&](auto& f, std::size_t line) {
    RawSalesRecord r;
    r.date = csv::need_date(f[1], name, line);
    r.store_nbr = csv::need_number<std::int64_t>(f[2], name, line, "store_nbr");
    r.item_nbr = csv::need_number<std::int64_t>(f[3], name, line, "item_nbr");
    r.unit_sales = csv::need_number<double>(f[4], name, line, "unit_sales");
    if (!std::isfinite(r.unit_sales)) throw IngestError(name, line, "non-finite unit_sales");
    // Blank promotion flags are read as "not on promotion".
    if (!f[5].empty() && !csv::parse_bool(f[5], r.onpromotion)) {
      throw IngestError(name, line, "bad onpromotion '" + f[5] + "'");
    }
    out.push_back(r);
  });
  return out;
}

inline std::vector<StoreMeta> parse_stores(std::istream& in, const std::string& name = "stores.csv") {
  std::vector<StoreMeta> out;
  csv::for_each_row(in, name, "store_nbr,city,state,type,cluster", [&](auto& f, std::size_t line) {
    out.push_back({csv::need_number<std::int64_t>(f[0], name, line, "store_nbr"), f[1], f[2], f[3],
                   csv::need_number<std::int64_t>(f[4], name, line, "cluster")});
  });
  return out;
}

inline std::vector<ItemMeta> parse_items(std::istream& in, const std::string& name = "items.csv") {
  std::vector<ItemMeta> out;
  csv::for_each_row(in, name, "item_nbr,family,class,perishable", [&](auto& f, std::size_t line) {
    ItemMeta m;
    m.item_nbr = csv::need_number<std::int64_t>(f[0], name, line, "item_nbr");
    m.family = f[1];
    m.item_class = csv::need_number<std::int64_t>(f[2], name, line, "class");
    if (!csv::parse_bool(f[3], m.perishable)) throw IngestError(name, line, "bad perishable flag '" + f[3] + "'");
    out.push_back(std::move(m));
  });
  return out;
}

inline std::vector<TransactionRecord> parse_transactions(std::istream& in, const std::string& name = "transactions.csv") {
  std::vector<TransactionRecord> out;
  csv::for_each_row(in, name, "date,store_nbr,transactions", [&](auto& f, std::size_t line) {
    out.push_back({csv::need_date(f[0], name, line), csv::need_number<std::int64_t>(f[1], name, line, "store_nbr"),
                   csv::need_number<double>(f[2], name, line, "transactions")});
  });
  return out;
}

inline std::vector<OilRecord> parse_oil(std::istream& in, const std::string& name = "oil.csv") {
  std::vector<OilRecord> out;
  csv::for_each_row(in, name, "date,dcoilwtico", [&](auto& f, std::size_t line) {
    OilRecord r{csv::need_date(f[0], name, line), std::nullopt};
    if (!f[1].empty()) r.price = csv::need_number<double>(f[1], name, line, "dcoilwtico");
    out.push_back(r);
  });
  return out;
}

inline std::vector<HolidayRecord> parse_holidays(std::istream& in, const std::string& name = "holidays_events.csv") {
  std::vector<HolidayRecord> out;
  csv::for_each_row(in, name, "date,type,locale,locale_name,description,transferred", [&](auto& f, std::size_t line) {
    HolidayRecord r;
    r.date = csv::need_date(f[0], name, line);
    r.type = f[1];
    r.locale = f[2];
    r.locale_name = f[3];
    r.description = f[4];
    if (!csv::parse_bool(f[5], r.transferred)) throw IngestError(name, line, "bad transferred flag '" + f[5] + "'");
    out.push_back(std::move(r));
  });
  return out;
}

struct IngestReport {
  std::map<std::string, std::size_t> rows;  // per file
};

inline RawTables ingest(const std::filesystem::path& dir, IngestReport* report = nullptr) {
  RawTables t;
  const auto open = [&](const char* file) {
    const auto path = dir / file;
    std::ifstream f(path);
    if (!f) throw MissingInputError("missing input file: " + path.string());
    return f;
  };
  {
    auto f = open("train.csv");
    t.sales = parse_sales(f);
  }
  {
    auto f = open("stores.csv");
    t.stores = parse_stores(f);
  }
  {
    auto f = open("items.csv");
    t.items = parse_items(f);
  }
  {
    auto f = open("transactions.csv");
    t.transactions = parse_transactions(f);
  }
  {
    auto f = open("oil.csv");
    t.oil = parse_oil(f);
  }
  {
    auto f = open("holidays_events.csv");
    t.holidays = parse_holidays(f);
  }
  if (report) {
    report->rows = {{"train.csv", t.sales.size()},        {"stores.csv", t.stores.size()},
                    {"items.csv", t.items.size()},        {"transactions.csv", t.transactions.size()},
                    {"oil.csv", t.oil.size()},            {"holidays_events.csv", t.holidays.size()}};
  }
  return t;
}

// Centres and scales a channel in place using only days <= train_end.
inline void normalize_channel(Channel& ch, std::size_t n_days, std::size_t train_end) {
  double s = 0.0, ss = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < ch.values.size(); ++i) {
    if (i % n_days > train_end) continue;
    s += ch.values[i];
    ss += ch.values[i] * ch.values[i];
    ++n;
  }
  const double mean = n ? s / static_cast<double>(n) : 0.0;
  const double var = n ? std::max(0.0, ss / static_cast<double>(n) - mean * mean) : 0.0;
  ch.mean = mean;
  ch.stddev = var > 1e-24 ? std::sqrt(var) : 1.0;
  for (auto& v : ch.values) v = (v - ch.mean) / ch.stddev;
}

// Appends one-hot columns for a categorical attribute; categories sorted.
template <typename Key>
void append_one_hot(const std::string& prefix, const std::vector<Key>& per_entity, std::vector<std::string>& names,
                    std::vector<std::vector<double>>& rows) {
  const std::set<Key> cats(per_entity.begin(), per_entity.end());
  std::map<Key, std::size_t> pos;
  for (const auto& c : cats) {
    pos[c] = pos.size();
    if constexpr (std::is_same_v<Key, std::string>) names.push_back(prefix + "=" + c);
    else names.push_back(prefix + "=" + std::to_string(c));
  }
  for (std::size_t e = 0; e < per_entity.size(); ++e) {
    std::vector<double> hot(cats.size(), 0.0);
    hot[pos[per_entity[e]]] = 1.0;
    rows[e].insert(rows[e].end(), hot.begin(), hot.end());
  }
}

struct DensifyReport {
  std::size_t cells = 0;
  std::size_t filled = 0;  // cells with no record
  double fill_fraction = 0.0;
  std::size_t clamped = 0;  // cells with negative summed sales
  double raw_sales_sum = 0.0;    // over records
  double dense_sales_sum = 0.0;  // over the dense grid before clamping
};

// Zero-fills the store x item x day grid spanning the first to the last
// sales date, applies log1p to clamped sales, aligns covariates, and
// normalises them with training-span statistics from `split`. Without a split
// the whole panel counts as training data.
inline PanelCube densify(const RawTables& raw, const std::optional<SplitSpec>& split_in,
                         DensifyReport* report = nullptr, const Date& origin = kFavoritaOrigin) {
  PanelCube c;
  c.origin = days_since_epoch(origin);
  std::int64_t max_day = -1;
  for (const auto& r : raw.sales) {
    const auto d = day_offset(origin, r.date);
    if (d < 0) throw std::invalid_argument("sales record dated " + format_date(r.date) + " precedes the origin");
    max_day = std::max(max_day, d);
  }
  c.n_days = static_cast<std::size_t>(max_day + 1);
  const SplitSpec split = split_in ? *split_in : SplitSpec::training_only(c.n_days);
  c.split = split;
  if (split_in) split.validate(c.n_days);

  std::set<std::int64_t> store_set, item_set, train_stores, train_items;
  for (const auto& r : raw.sales) {
    store_set.insert(r.store_nbr);
    item_set.insert(r.item_nbr);
    if (static_cast<std::size_t>(day_offset(origin, r.date)) <= split.train_end) {
      train_stores.insert(r.store_nbr);
      train_items.insert(r.item_nbr);
    }
  }
  c.store_ids.assign(store_set.begin(), store_set.end());
  c.item_ids.assign(item_set.begin(), item_set.end());
  std::unordered_map<std::int64_t, std::size_t> store_pos, item_pos;
  for (std::size_t i = 0; i < c.store_ids.size(); ++i) store_pos[c.store_ids[i]] = i;
  for (std::size_t i = 0; i < c.item_ids.size(); ++i) item_pos[c.item_ids[i]] = i;

  // Ids unseen during training share the last ("unknown") embedding row.
  const auto embed_index = [](const std::vector<std::int64_t>& ids, const std::set<std::int64_t>& seen,
                              std::vector<std::uint32_t>& out) {
    std::uint32_t next = 0;
    for (auto id : ids) out.push_back(seen.count(id) ? next++ : std::numeric_limits<std::uint32_t>::max());
    for (auto& e : out) if (e == std::numeric_limits<std::uint32_t>::max()) e = next;
    return next + 1;
  };
  c.store_vocab = embed_index(c.store_ids, train_stores, c.store_embed);
  c.item_vocab = embed_index(c.item_ids, train_items, c.item_embed);

  // Metadata.
  std::unordered_map<std::int64_t, const StoreMeta*> smeta;
  std::unordered_map<std::int64_t, const ItemMeta*> imeta;
  for (const auto& s : raw.stores) smeta[s.store_nbr] = &s;
  for (const auto& i : raw.items) imeta[i.item_nbr] = &i;
  std::vector<std::string> city, state, type, family;
  std::vector<std::int64_t> cluster, klass;
  for (auto id : c.store_ids) {
    auto it = smeta.find(id);
    if (it == smeta.end()) throw std::invalid_argument("store " + std::to_string(id) + " has no metadata");
    city.push_back(it->second->city);
    state.push_back(it->second->state);
    type.push_back(it->second->type);
    cluster.push_back(it->second->cluster);
  }
  for (auto id : c.item_ids) {
    auto it = imeta.find(id);
    if (it == imeta.end()) throw std::invalid_argument("item " + std::to_string(id) + " has no metadata");
    family.push_back(it->second->family);
    klass.push_back(it->second->item_class);
    c.perishable.push_back(it->second->perishable ? 1 : 0);
  }
  {
    std::vector<std::vector<double>> rows(c.n_stores());
    append_one_hot("city", city, c.store_static_names, rows);
    append_one_hot("state", state, c.store_static_names, rows);
    append_one_hot("type", type, c.store_static_names, rows);
    append_one_hot("cluster", cluster, c.store_static_names, rows);
    for (auto& r : rows) c.store_static.insert(c.store_static.end(), r.begin(), r.end());
  }
  {
    std::vector<std::vector<double>> rows(c.n_items());
    append_one_hot("family", family, c.item_static_names, rows);
    append_one_hot("class", klass, c.item_static_names, rows);
    c.item_static_names.push_back("perishable");
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].push_back(c.perishable[i]);
    for (auto& r : rows) c.item_static.insert(c.item_static.end(), r.begin(), r.end());
  }

  // Sales grid and promotion channel.
  std::vector<double> sales(c.n_series() * c.n_days, 0.0);
  std::vector<std::uint8_t> present(sales.size(), 0);
  Channel promo{"onpromotion", ChannelScope::series_day, true, 0.0, 1.0, std::vector<double>(sales.size(), 0.0)};
  DensifyReport rep;
  for (const auto& r : raw.sales) {
    const auto idx = c.cell(store_pos[r.store_nbr], item_pos[r.item_nbr], static_cast<std::size_t>(day_offset(origin, r.date)));
    sales[idx] += r.unit_sales;
    present[idx] = 1;
    if (r.onpromotion) promo.values[idx] = 1.0;
    rep.raw_sales_sum += r.unit_sales;
  }
  c.target.resize(sales.size());
  for (std::size_t i = 0; i < sales.size(); ++i) {
    rep.dense_sales_sum += sales[i];
    if (!present[i]) ++rep.filled;
    // Returns can make a cell negative; log1p needs a non-negative count.
    if (sales[i] < 0) ++rep.clamped;
    c.target[i] = std::log1p(std::max(0.0, sales[i]));
  }
  rep.cells = sales.size();
  rep.fill_fraction = rep.cells ? static_cast<double>(rep.filled) / static_cast<double>(rep.cells) : 0.0;

  // Oil: forward fill, then back fill the head.
  Channel oil{"oil", ChannelScope::day, false, 0.0, 1.0, std::vector<double>(c.n_days, std::nan(""))};
  for (const auto& o : raw.oil) {
    const auto d = day_offset(origin, o.date);
    if (o.price && d >= 0 && static_cast<std::size_t>(d) < c.n_days) oil.values[static_cast<std::size_t>(d)] = *o.price;
  }
  {
    double last = std::nan("");
    for (auto& v : oil.values) {
      if (std::isnan(v)) v = last;
      else last = v;
    }
    auto first = std::find_if(oil.values.begin(), oil.values.end(), [](double v) { return !std::isnan(v); });
    const double head = first == oil.values.end() ? 0.0 : *first;
    for (auto& v : oil.values) if (std::isnan(v)) v = head;
  }

  Channel trans{"transactions", ChannelScope::store_day, false, 0.0, 1.0, std::vector<double>(c.n_stores() * c.n_days, 0.0)};
  for (const auto& t : raw.transactions) {
    const auto d = day_offset(origin, t.date);
    auto it = store_pos.find(t.store_nbr);
    if (it == store_pos.end() || d < 0 || static_cast<std::size_t>(d) >= c.n_days) continue;
    trans.values[it->second * c.n_days + static_cast<std::size_t>(d)] = t.transactions;
  }

  // Holiday flag per store-day: national events apply everywhere, regional
  // ones by state, local ones by city. Transferred days and work days are not
  // holidays.
  Channel hol{"holiday", ChannelScope::store_day, true, 0.0, 1.0, std::vector<double>(c.n_stores() * c.n_days, 0.0)};
  for (const auto& h : raw.holidays) {
    const auto d = day_offset(origin, h.date);
    if (h.transferred || h.type == "Work Day" || d < 0 || static_cast<std::size_t>(d) >= c.n_days) continue;
    for (std::size_t s = 0; s < c.n_stores(); ++s) {
      const bool applies = h.locale == "National" || (h.locale == "Regional" && h.locale_name == state[s]) ||
                           (h.locale == "Local" && h.locale_name == city[s]);
      if (applies) hol.values[s * c.n_days + static_cast<std::size_t>(d)] = 1.0;
    }
  }

  for (Channel* ch : {&promo, &oil, &trans, &hol}) {
    if (c.n_days) normalize_channel(*ch, c.n_days, split.train_end);
    c.channels.push_back(std::move(*ch));
  }
  if (report) *report = rep;
  c.check_consistency();
  return c;
}

}  // namespace panelcast
