#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "nodelearn/config.hpp"
#include "nodelearn/engine.hpp"
#include "nodelearn/metrics.hpp"

namespace nodelearn {

namespace fs = std::filesystem;

constexpr int kRunFormatVersion = 1;
inline const char* kToolVersion = "0.1.0";

struct RunInfo {
  std::string config_path;
  bool seed_override = false;
};

namespace detail {

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + p.string() + "'");
  out << text;
}

inline std::string jsonl(const std::vector<json>& lines) {
  std::string out;
  for (const auto& l : lines) out += l.dump() + '\n';
  return out;
}

inline json optional_real(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace detail

inline json run_summary(const SimState& s, const ScenarioConfig& cfg) {
  const auto scalars = metrics::run_scalars(s.records, s.drift_onsets, cfg.metrics.epsilon,
                                            cfg.metrics.al_window, cfg.metrics.epi_compute_only);
  json per_node = json::object();
  for (const auto& [n, v] : metrics::epi_per_node(s.records, cfg.metrics.epi_compute_only))
    per_node[std::to_string(n)] = v;
  const auto audit = audit_energy(s);
  json j{{"scalars", scalars},
         {"epi_per_node", per_node},
         {"final_accuracy_per_node", json::object()},
         {"energy_audit", {{"ok", audit.ok}, {"message", audit.message}}}};
  for (const auto& [n, v] : metrics::final_accuracy(s.records))
    j["final_accuracy_per_node"][std::to_string(n)] = v;
  return j;
}

// Write every artifact of a finished (or halted) run into `dir`.
inline std::vector<fs::path> write_run(const fs::path& dir, const SimState& s, const ScenarioConfig& cfg,
                                       const RunInfo& info) {
  fs::create_directories(dir);
  const fs::path abs = fs::absolute(dir).lexically_normal();
  std::vector<fs::path> files;
  auto put = [&](const std::string& name, const std::string& text) {
    detail::write_text(abs / name, text);
    files.push_back(abs / name);
  };
  put("metrics.csv", metrics::format_records(s.records));
  put("events.jsonl", detail::jsonl(s.events));
  put("config-echo.json", to_json(cfg).dump(2) + '\n');
  put("summary.json", run_summary(s, cfg).dump(2) + '\n');
  if (cfg.output.packets) put("packets.jsonl", detail::jsonl(s.packets));
  if (cfg.output.trust_snapshots) {
    std::string t = "tick,i,j,trust\n";
    for (const auto& r : s.trust_log)
      t += std::to_string(r.tick) + ',' + std::to_string(r.i) + ',' + std::to_string(r.j) + ',' +
           csv::format_double(r.trust) + '\n';
    put("trust.csv", t);
  }
  json file_list = json::array();
  for (const auto& f : files) file_list.push_back(f.string());
  const json manifest{
      {"format_version", kRunFormatVersion},
      {"tool", "nodelearn"},
      {"tool_version", kToolVersion},
      {"name", cfg.name},
      {"seed", cfg.seed},
      {"seed_override", info.seed_override},
      {"regime", to_string(cfg.regime)},
      {"ticks", cfg.ticks},
      {"ticks_run", s.tick},
      {"halted", s.halted},
      {"drift_onsets", s.drift_onsets},
      {"epsilon", cfg.metrics.epsilon},
      {"al_window", cfg.metrics.al_window},
      {"epi_compute_only", cfg.metrics.epi_compute_only},
      {"config_path", info.config_path.empty() ? std::string() : fs::absolute(info.config_path).lexically_normal().string()},
      {"output_dir", abs.string()},
      {"files", file_list},
      {"complete", true},
  };
  put("manifest.json", manifest.dump(2) + '\n');
  return files;
}

inline bool run_dir_complete(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) return false;
  try {
    return json::parse(in).value("complete", false);
  } catch (const json::exception&) {
    return false;
  }
}

struct ReportResult {
  std::vector<metrics::ReportRow> rows;
  std::vector<std::string> missing;  // "<dir>: <what>"
};

// Group key: the directory with a trailing "seed=<k>" component dropped, so
// a sweep's seeds collapse into one row per cell.
inline std::string report_group(const fs::path& dir) {
  fs::path p = fs::absolute(dir).lexically_normal();
  if (p.filename().empty()) p = p.parent_path();
  if (p.filename().string().rfind("seed=", 0) == 0) return p.parent_path().string();
  return p.string();
}

inline ReportResult report(const std::vector<fs::path>& dirs) {
  ReportResult out;
  std::map<std::string, std::vector<std::map<std::string, double>>> groups;
  for (const auto& d : dirs) {
    json manifest;
    std::vector<MetricRecord> records;
    try {
      std::ifstream in(d / "manifest.json");
      if (!in) {
        out.missing.push_back(d.string() + ": manifest.json");
        continue;
      }
      manifest = json::parse(in);
    } catch (const std::exception& e) {
      out.missing.push_back(d.string() + ": manifest.json unreadable (" + e.what() + ")");
      continue;
    }
    if (!fs::exists(d / "metrics.csv")) {
      out.missing.push_back(d.string() + ": metrics.csv");
      continue;
    }
    try {
      records = metrics::load_records((d / "metrics.csv").string());
    } catch (const std::exception& e) {
      out.missing.push_back(d.string() + ": metrics.csv unreadable (" + e.what() + ")");
      continue;
    }
    const auto onsets = manifest.value("drift_onsets", std::vector<Tick>{});
    groups[report_group(d)].push_back(metrics::run_scalars(
        records, onsets, manifest.value("epsilon", 0.02), manifest.value("al_window", Tick{20}),
        manifest.value("epi_compute_only", false)));
  }
  out.rows = metrics::aggregate(groups);
  return out;
}

}  // namespace nodelearn
