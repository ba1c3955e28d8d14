#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "nodelearn/csv.hpp"
#include "nodelearn/engine.hpp"
#include "nodelearn/errors.hpp"

namespace nodelearn::metrics {

// ---------------------------------------------------------------------------
// metrics.csv

inline const char* kCsvHeader =
    "tick,node,accuracy,energy_j,compute_energy_j,bytes_tx,bytes_rx,updates,skipped,events";

inline std::string format_records(std::span<const MetricRecord> records) {
  std::string out = std::string(kCsvHeader) + "\n";
  for (const auto& r : records) {
    out += std::to_string(r.tick) + ',' + (r.node == kPopulation ? "pop" : std::to_string(r.node)) +
           ',' + csv::format_double(r.accuracy) + ',' + csv::format_double(r.energy_j) + ',' +
           csv::format_double(r.compute_energy_j) + ',' + std::to_string(r.bytes_tx) + ',' +
           std::to_string(r.bytes_rx) + ',' + std::to_string(r.updates) + ',' +
           std::to_string(r.skipped) + ',' + csv::quote_if_needed(r.events) + '\n';
  }
  return out;
}

inline std::vector<MetricRecord> parse_records(std::istream& in, const std::string& name = "metrics.csv") {
  std::string line;
  if (!std::getline(in, line) || csv::trim(line) != kCsvHeader)
    throw IngestionError(name + ": unexpected header", 1);
  std::vector<MetricRecord> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    const auto f = csv::split_line(line);
    if (f.size() != 10) throw IngestionError(name + ": expected 10 fields", lineno);
    MetricRecord r;
    auto tick = csv::parse_int(f[0]);
    auto acc = csv::parse_double(f[2]);
    auto e = csv::parse_double(f[3]);
    auto ce = csv::parse_double(f[4]);
    auto tx = csv::parse_int(f[5]), rx = csv::parse_int(f[6]), up = csv::parse_int(f[7]),
         sk = csv::parse_int(f[8]);
    if (!tick || !acc || !e || !ce || !tx || !rx || !up || !sk)
      throw IngestionError(name + ": non-numeric value", lineno);
    r.tick = *tick;
    if (csv::trim(f[1]) == "pop") r.node = kPopulation;
    else if (auto n = csv::parse_int(f[1])) r.node = *n;
    else throw IngestionError(name + ": bad node id", lineno);
    r.accuracy = *acc;
    r.energy_j = *e;
    r.compute_energy_j = *ce;
    r.bytes_tx = static_cast<std::uint64_t>(*tx);
    r.bytes_rx = static_cast<std::uint64_t>(*rx);
    r.updates = static_cast<std::uint64_t>(*up);
    r.skipped = static_cast<std::uint64_t>(*sk);
    r.events = f[9];
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<MetricRecord> load_records(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path + "'", 0);
  return parse_records(in, path);
}

// ---------------------------------------------------------------------------
// Views

// Records of one node (or the population row), in tick order.
inline std::vector<MetricRecord> series(std::span<const MetricRecord> records, std::int64_t node) {
  std::vector<MetricRecord> out;
  for (const auto& r : records)
    if (r.node == node) out.push_back(r);
  return out;
}

inline std::optional<Tick> last_tick(std::span<const MetricRecord> records) {
  std::optional<Tick> t;
  for (const auto& r : records)
    if (!t || r.tick > *t) t = r.tick;
  return t;
}

// Node ids with a row at the final tick: the survivors.
inline std::vector<std::int64_t> final_nodes(std::span<const MetricRecord> records) {
  std::vector<std::int64_t> out;
  const auto t = last_tick(records);
  if (!t) return out;
  for (const auto& r : records)
    if (r.tick == *t && r.node != kPopulation) out.push_back(r.node);
  std::sort(out.begin(), out.end());
  return out;
}

inline std::map<std::int64_t, double> final_accuracy(std::span<const MetricRecord> records) {
  std::map<std::int64_t, double> out;
  const auto t = last_tick(records);
  if (!t) return out;
  for (const auto& r : records)
    if (r.tick == *t && r.node != kPopulation) out[r.node] = r.accuracy;
  return out;
}

// Per-node accuracy averaged over every recorded tick.
inline std::map<std::int64_t, double> time_averaged_accuracy(std::span<const MetricRecord> records) {
  std::map<std::int64_t, std::pair<double, std::size_t>> acc;
  for (const auto& r : records)
    if (r.node != kPopulation) {
      acc[r.node].first += r.accuracy;
      ++acc[r.node].second;
    }
  std::map<std::int64_t, double> out;
  for (const auto& [n, p] : acc) out[n] = p.first / static_cast<double>(p.second);
  return out;
}

inline std::optional<double> mean_of(const std::map<std::int64_t, double>& m,
                                     const std::set<std::int64_t>& exclude = {}) {
  double s = 0.0;
  std::size_t k = 0;
  for (const auto& [n, v] : m)
    if (!exclude.count(n)) {
      s += v;
      ++k;
    }
  if (k == 0) return std::nullopt;
  return s / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// EPI: joules per local update between two cumulative records of one node.
// Communication energy is included unless compute_only is set.

inline std::optional<double> epi(const MetricRecord& start, const MetricRecord& end,
                                 bool compute_only = false) {
  if (end.updates <= start.updates) return std::nullopt;
  const double joules = compute_only ? end.compute_energy_j - start.compute_energy_j
                                     : end.energy_j - start.energy_j;
  return joules / static_cast<double>(end.updates - start.updates);
}

// Whole-run EPI per node (from zero to its last row).
inline std::map<std::int64_t, double> epi_per_node(std::span<const MetricRecord> records,
                                                   bool compute_only = false) {
  std::map<std::int64_t, MetricRecord> last;
  for (const auto& r : records)
    if (r.node != kPopulation) last[r.node] = r;
  std::map<std::int64_t, double> out;
  for (const auto& [n, r] : last)
    if (auto v = epi(MetricRecord{}, r, compute_only)) out[n] = *v;
  return out;
}

inline std::optional<double> epi_population(std::span<const MetricRecord> records,
                                            bool compute_only = false) {
  return mean_of(epi_per_node(records, compute_only));
}

// ---------------------------------------------------------------------------
// CE: (mean final accuracy - baseline mean final accuracy) / total bytes.

inline std::uint64_t total_bytes(std::span<const MetricRecord> records) {
  std::uint64_t b = 0;
  const auto t = last_tick(records);
  for (const auto& r : records)
    if (r.node == kPopulation && r.tick == t) b = r.bytes_tx;
  return b;
}

inline std::optional<double> ce(double accuracy, double baseline_accuracy, std::uint64_t bytes) {
  if (bytes == 0) return std::nullopt;
  return (accuracy - baseline_accuracy) / static_cast<double>(bytes);
}

inline std::optional<double> ce(std::span<const MetricRecord> run, std::span<const MetricRecord> baseline,
                                bool time_averaged = false, const std::set<std::int64_t>& exclude = {}) {
  auto a = mean_of(time_averaged ? time_averaged_accuracy(run) : final_accuracy(run), exclude);
  auto b = mean_of(time_averaged ? time_averaged_accuracy(baseline) : final_accuracy(baseline), exclude);
  if (!a || !b) return std::nullopt;
  return ce(*a, *b, total_bytes(run));
}

// ---------------------------------------------------------------------------
// AL: ticks from drift onset until accuracy is back within epsilon of the
// trailing pre-drift mean. Absent when it never recovers.

inline std::optional<Tick> al(std::span<const MetricRecord> node_series, Tick onset,
                              double epsilon = 0.02, Tick window = 20) {
  std::vector<double> pre;
  for (const auto& r : node_series)
    if (r.tick < onset && r.tick >= onset - window) pre.push_back(r.accuracy);
  if (pre.empty()) return std::nullopt;
  double ref = 0.0;
  for (double a : pre) ref += a;
  ref /= static_cast<double>(pre.size());
  for (const auto& r : node_series)
    if (r.tick >= onset && r.accuracy >= ref - epsilon) return r.tick - onset;
  return std::nullopt;
}

inline std::map<std::int64_t, std::optional<Tick>> al_per_node(std::span<const MetricRecord> records,
                                                               std::span<const Tick> onsets, Tick onset,
                                                               double epsilon = 0.02, Tick window = 20) {
  if (std::find(onsets.begin(), onsets.end(), onset) == onsets.end())
    throw UsageError("no drift with onset at tick " + std::to_string(onset));
  std::map<std::int64_t, std::vector<MetricRecord>> by_node;
  for (const auto& r : records)
    if (r.node != kPopulation) by_node[r.node].push_back(r);
  std::map<std::int64_t, std::optional<Tick>> out;
  for (const auto& [n, s] : by_node) out[n] = al(s, onset, epsilon, window);
  return out;
}

struct AlSummary {
  std::optional<double> mean;  // over recovered nodes
  std::size_t recovered = 0;
  std::size_t censored = 0;    // never recovered within the run
};

inline AlSummary summarize_al(const std::map<std::int64_t, std::optional<Tick>>& per_node,
                              const std::set<std::int64_t>& exclude = {}) {
  AlSummary s;
  double sum = 0.0;
  for (const auto& [n, v] : per_node) {
    if (exclude.count(n)) continue;
    if (v) {
      sum += static_cast<double>(*v);
      ++s.recovered;
    } else {
      ++s.censored;
    }
  }
  if (s.recovered) s.mean = sum / static_cast<double>(s.recovered);
  return s;
}

// ---------------------------------------------------------------------------
// RR: survivors' mean final accuracy under dropout over the same nodes'
// mean final accuracy without dropout.

inline std::optional<double> rr(std::span<const MetricRecord> with_dropout,
                                std::span<const MetricRecord> without,
                                const std::set<std::int64_t>& exclude = {}) {
  const auto a = final_accuracy(with_dropout);
  const auto b = final_accuracy(without);
  double num = 0.0, den = 0.0;
  std::size_t k = 0;
  for (const auto& [n, v] : a) {
    if (exclude.count(n) || !b.count(n)) continue;
    num += v;
    den += b.at(n);
    ++k;
  }
  if (k == 0 || den == 0.0) return std::nullopt;
  return (num / static_cast<double>(k)) / (den / static_cast<double>(k));
}

// ---------------------------------------------------------------------------
// Report: mean and population std (ddof 0) per metric over a set of runs.

struct Stat {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;
};

inline Stat stat(const std::vector<double>& v) {
  Stat s;
  s.n = v.size();
  if (v.empty()) return s;
  double sum = 0.0;
  for (double x : v) sum += x;
  s.mean = sum / static_cast<double>(v.size());
  double sq = 0.0;
  for (double x : v) sq += (x - s.mean) * (x - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(v.size()));
  return s;
}

// Scalar summary of one run, recomputed from its records.
inline std::map<std::string, double> run_scalars(std::span<const MetricRecord> records,
                                                 std::span<const Tick> onsets, double epsilon,
                                                 Tick window, bool epi_compute_only) {
  std::map<std::string, double> out;
  const auto t = last_tick(records);
  if (!t) return out;
  for (const auto& r : records)
    if (r.node == kPopulation && r.tick == *t) {
      out["final_accuracy"] = r.accuracy;
      out["energy_j"] = r.energy_j;
      out["bytes_tx"] = static_cast<double>(r.bytes_tx);
      out["updates"] = static_cast<double>(r.updates);
    }
  if (auto e = epi_population(records, epi_compute_only)) out["epi_j"] = *e;
  out["survivors"] = static_cast<double>(final_nodes(records).size());
  for (std::size_t k = 0; k < onsets.size(); ++k) {
    const auto s = summarize_al(al_per_node(records, onsets, onsets[k], epsilon, window));
    const std::string key = onsets.size() == 1 ? "al" : "al_" + std::to_string(k);
    if (s.mean) out[key + "_ticks"] = *s.mean;
    out[key + "_censored"] = static_cast<double>(s.censored);
  }
  return out;
}

struct ReportRow {
  std::string group;
  std::string metric;
  Stat stat;
};

inline std::vector<ReportRow> aggregate(const std::map<std::string, std::vector<std::map<std::string, double>>>& groups) {
  std::vector<ReportRow> rows;
  for (const auto& [g, runs] : groups) {
    std::set<std::string> keys;
    for (const auto& r : runs)
      for (const auto& [k, v] : r) keys.insert(k);
    for (const auto& k : keys) {
      std::vector<double> vals;
      for (const auto& r : runs)
        if (auto it = r.find(k); it != r.end()) vals.push_back(it->second);
      rows.push_back({g, k, stat(vals)});
    }
  }
  return rows;
}

inline std::string format_report(const std::vector<ReportRow>& rows) {
  std::string out = "group,metric,n,mean,std\n";
  for (const auto& r : rows)
    out += csv::quote_if_needed(r.group) + ',' + r.metric + ',' + std::to_string(r.stat.n) + ',' +
           csv::format_double(r.stat.mean) + ',' + csv::format_double(r.stat.std) + '\n';
  return out;
}

}  // namespace nodelearn::metrics
