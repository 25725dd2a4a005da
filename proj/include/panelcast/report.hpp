#pragma once

// CSV reports and the JSON run manifest written next to them.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "panelcast/config.hpp"
#include "panelcast/train.hpp"

namespace panelcast {

namespace detail {

inline std::ofstream open_report(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write '" + path.string() + "'");
  return f;
}

}  // namespace detail

inline void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  auto f = detail::open_report(path);
  f << "period,model,config,metric,mean,std\n";
  for (const auto& r : rows)
    f << r.period << ',' << r.model << ',' << r.config << ',' << r.metric << ',' << format_double(r.mean) << ','
      << format_double(r.std) << '\n';
}

inline void write_daily_csv(const std::filesystem::path& path, const std::vector<DailyRow>& rows) {
  auto f = detail::open_report(path);
  f << "period,day_offset,rmsle,std\n";
  for (const auto& r : rows)
    f << r.period << ',' << r.day_offset << ',' << format_double(r.rmsle) << ',' << format_double(r.std) << '\n';
}

inline void write_groups_csv(const std::filesystem::path& path, const std::vector<GroupRow>& rows) {
  auto f = detail::open_report(path);
  f << "period,dimension,key,rmsle\n";
  for (const auto& r : rows) f << r.period << ',' << r.dimension << ',' << r.key << ',' << format_double(r.rmsle) << '\n';
}

inline void write_ablation_csv(const std::filesystem::path& path, const AblationReport& rep) {
  auto f = detail::open_report(path);
  f << "period,config,metric,mean,std,t,p,significant\n";
  for (const auto& r : rep.rows)
    f << r.period << ',' << r.config << ',' << r.metric << ',' << format_double(r.mean) << ',' << format_double(r.std)
      << ',' << format_double(r.t) << ',' << format_double(r.p) << ',' << (r.significant ? 1 : 0) << '\n';
}

// FNV-1a digest of a file's bytes, as hex; empty when unreadable.
inline std::string file_digest(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return {};
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

// Provenance of one command invocation.
struct RunManifest {
  std::string command;
  std::string config_digest;
  std::vector<std::uint64_t> seeds;
  std::string data_digest;
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["command"] = command;
    j["config_digest"] = config_digest;
    j["seeds"] = seeds;
    j["data_digest"] = data_digest;
    j["outputs"] = outputs;
    j["started"] = started;
    j["finished"] = finished;
    return j;
  }
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const auto day = std::chrono::floor<std::chrono::days>(now);
  const std::chrono::hh_mm_ss hms(now - day);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%sT%02d:%02d:%02dZ", format_date(std::chrono::year_month_day(day)).c_str(),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

inline void write_manifest(const std::filesystem::path& path, const RunManifest& m) {
  auto f = detail::open_report(path);
  f << m.to_json().dump(2) << '\n';
}

}  // namespace panelcast
