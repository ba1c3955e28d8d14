#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "nodelearn/csv.hpp"
#include "nodelearn/errors.hpp"
#include "nodelearn/rng.hpp"
#include "nodelearn/types.hpp"

namespace nodelearn {

enum class DriftKind { prototype_rotation, prior_shift, covariate_scale };

inline const char* to_string(DriftKind k) {
  switch (k) {
    case DriftKind::prototype_rotation: return "prototype-rotation";
    case DriftKind::prior_shift: return "prior-shift";
    case DriftKind::covariate_scale: return "covariate-scale";
  }
  return "?";
}

inline DriftKind parse_drift_kind(const std::string& s) {
  if (s == "prototype-rotation") return DriftKind::prototype_rotation;
  if (s == "prior-shift") return DriftKind::prior_shift;
  if (s == "covariate-scale") return DriftKind::covariate_scale;
  throw ConfigError("unknown drift kind '" + s + "'");
}

// A scheduled change to the data-generating process. `axes` is the rotation
// plane (two feature indices) for prototype-rotation and the swapped class
// pair for prior-shift; covariate-scale ignores it.
struct DriftEvent {
  Tick tick = 0;
  DriftKind kind = DriftKind::prototype_rotation;
  double magnitude = 0.0;
  std::size_t axes[2] = {0, 1};

  friend bool operator==(const DriftEvent& a, const DriftEvent& b) {
    return a.tick == b.tick && a.kind == b.kind && a.magnitude == b.magnitude &&
           a.axes[0] == b.axes[0] && a.axes[1] == b.axes[1];
  }
};

// Per-node non-IID, drifting stream description. Synthetic streams draw
// x ~ N(prototype[y], sigma^2 I); pooled streams (CSV-backed) draw x
// uniformly from the rows of class y.
struct DataStreamSpec {
  std::size_t classes = 0;
  std::size_t features = 0;
  std::vector<std::vector<double>> prototypes;  // classes x features
  double sigma = 1.0;
  std::vector<std::vector<double>> priors;      // one label distribution per node
  std::vector<DriftEvent> schedule;             // pending drifts, strictly increasing ticks
  std::vector<std::vector<bool>> masks;         // per node; empty = all features observed
  std::vector<std::vector<Sample>> pool;        // per class; empty = synthetic
  std::uint64_t seed = 0;

  bool pooled() const noexcept { return !pool.empty(); }

  void validate() const {
    if (classes < 2) throw ConfigError("data: need at least 2 classes");
    if (features < 1) throw ConfigError("data: need at least 1 feature");
    if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw ConfigError("data: sigma must be >= 0");
    if (!pooled() && prototypes.size() != classes)
      throw ConfigError("data: need one prototype per class");
    for (const auto& p : prototypes)
      if (p.size() != features) throw ConfigError("data: prototype dimension mismatch");
    for (std::size_t i = 0; i < priors.size(); ++i) {
      const auto& pr = priors[i];
      if (pr.size() != classes) throw ConfigError("data: prior length mismatch");
      double s = 0.0;
      for (double v : pr) {
        if (!(v >= 0.0)) throw ConfigError("data: negative prior entry");
        s += v;
      }
      if (std::abs(s - 1.0) > 1e-9) throw ConfigError("data: prior does not sum to 1");
    }
    for (std::size_t i = 1; i < schedule.size(); ++i)
      if (schedule[i].tick <= schedule[i - 1].tick)
        throw ConfigError("data: drift ticks must be strictly increasing");
    for (const auto& d : schedule) {
      if (d.kind == DriftKind::prototype_rotation &&
          (d.axes[0] >= features || d.axes[1] >= features || d.axes[0] == d.axes[1]))
        throw ConfigError("data: rotation plane must name two distinct features");
      if (d.kind == DriftKind::prior_shift && (d.axes[0] >= classes || d.axes[1] >= classes))
        throw ConfigError("data: prior-shift classes out of range");
      if (d.kind == DriftKind::covariate_scale && !(d.magnitude >= 0.0))
        throw ConfigError("data: covariate scale must be nonnegative");
    }
    for (const auto& m : masks)
      if (!m.empty() && m.size() != features) throw ConfigError("data: mask length mismatch");
    if (pooled()) {
      if (pool.size() != classes) throw ConfigError("data: pool needs one bucket per class");
      for (const auto& bucket : pool)
        if (bucket.empty()) throw ConfigError("data: every class needs at least one row");
    }
  }
};

// Prototypes a * e_c (requires features >= classes). With equal priors the
// Bayes rule is argmax_c x_c and its accuracy has a one-dimensional integral
// form, see bayes_accuracy_orthogonal.
inline std::vector<std::vector<double>> orthogonal_prototypes(std::size_t classes,
                                                              std::size_t features,
                                                              double scale) {
  if (features < classes)
    throw ConfigError("orthogonal prototypes need features >= classes");
  std::vector<std::vector<double>> protos(classes, std::vector<double>(features, 0.0));
  for (std::size_t c = 0; c < classes; ++c) protos[c][c] = scale;
  return protos;
}

// P(correct) = integral phi(z) Phi(z + s)^(k-1) dz with s = scale / sigma.
inline double bayes_accuracy_orthogonal(std::size_t classes, double separation) {
  auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); };
  auto Phi = [](double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); };
  const double lo = -12.0, hi = 12.0;
  const int n = 6000;  // even, Simpson
  const double h = (hi - lo) / n;
  double sum = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double z = lo + i * h;
    const double f = phi(z) * std::pow(Phi(z + separation), static_cast<double>(classes - 1));
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    sum += w * f;
  }
  return sum * h / 3.0;
}

// Inverse of bayes_accuracy_orthogonal in the separation argument.
inline double separation_for_bayes_accuracy(std::size_t classes, double target) {
  const double chance = 1.0 / static_cast<double>(classes);
  if (!(target > chance && target < 1.0))
    throw ConfigError("target Bayes accuracy must lie in (1/k, 1)");
  double lo = 0.0, hi = 40.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (bayes_accuracy_orthogonal(classes, mid) < target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

// Label priors drawn Dirichlet(alpha * 1_k), one per node.
inline std::vector<std::vector<double>> dirichlet_partition(double alpha, std::size_t nodes,
                                                            std::size_t classes,
                                                            std::uint64_t seed) {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ConfigError("dirichlet alpha must be > 0");
  if (classes < 1) throw ConfigError("dirichlet needs at least one class");
  std::vector<std::vector<double>> out(nodes, std::vector<double>(classes, 0.0));
  for (std::size_t i = 0; i < nodes; ++i) {
    Rng rng(seed, Stream::partition, i);
    std::vector<double> logs(classes);
    for (auto& l : logs) l = rng.log_gamma_variate(alpha);
    const double m = *std::max_element(logs.begin(), logs.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      out[i][c] = std::exp(logs[c] - m);
      sum += out[i][c];
    }
    for (double& v : out[i]) v /= sum;
  }
  return out;
}

inline void apply_drift(DataStreamSpec& spec, const DriftEvent& d) {
  switch (d.kind) {
    case DriftKind::prototype_rotation: {
      const double cs = std::cos(d.magnitude), sn = std::sin(d.magnitude);
      const std::size_t a = d.axes[0], b = d.axes[1];
      auto rotate = [&](std::vector<double>& v) {
        const double va = v[a], vb = v[b];
        v[a] = cs * va - sn * vb;
        v[b] = sn * va + cs * vb;
      };
      for (auto& p : spec.prototypes) rotate(p);
      for (auto& bucket : spec.pool)
        for (auto& s : bucket) rotate(s.x);
      break;
    }
    case DriftKind::prior_shift:
      for (auto& pr : spec.priors) std::swap(pr[d.axes[0]], pr[d.axes[1]]);
      break;
    case DriftKind::covariate_scale:
      spec.sigma *= d.magnitude;
      for (std::size_t c = 0; c < spec.pool.size(); ++c) {
        auto& bucket = spec.pool[c];
        std::vector<double> mean(spec.features, 0.0);
        for (const auto& s : bucket)
          for (std::size_t f = 0; f < spec.features; ++f) mean[f] += s.x[f];
        for (double& m : mean) m /= static_cast<double>(bucket.size());
        for (auto& s : bucket)
          for (std::size_t f = 0; f < spec.features; ++f)
            s.x[f] = mean[f] + d.magnitude * (s.x[f] - mean[f]);
      }
      break;
  }
}

// Apply and consume the schedule entry at tick t.
inline DataStreamSpec inject_drift(DataStreamSpec spec, Tick t) {
  auto it = std::find_if(spec.schedule.begin(), spec.schedule.end(),
                         [t](const DriftEvent& d) { return d.tick == t; });
  if (it == spec.schedule.end())
    throw UsageError("no drift scheduled at tick " + std::to_string(t));
  const DriftEvent d = *it;
  spec.schedule.erase(it);
  apply_drift(spec, d);
  return spec;
}

// Spec as seen by samples drawn at tick t: every drift scheduled at a tick
// strictly before t has taken effect (a drift at tick T applies from T+1).
inline DataStreamSpec resolve_at(DataStreamSpec spec, Tick t) {
  while (!spec.schedule.empty() && spec.schedule.front().tick < t) {
    const DriftEvent d = spec.schedule.front();
    spec.schedule.erase(spec.schedule.begin());
    apply_drift(spec, d);
  }
  return spec;
}

namespace detail {

inline std::size_t draw_label(std::span<const double> prior, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last = 0;
  for (std::size_t c = 0; c < prior.size(); ++c) {
    if (prior[c] <= 0.0) continue;
    acc += prior[c];
    last = c;
    if (u < acc) return c;
  }
  return last;
}

inline Sample draw_sample(const DataStreamSpec& spec, std::size_t label,
                          const std::vector<bool>* mask, Rng& rng) {
  Sample s;
  s.y = label;
  if (spec.pooled()) {
    const auto& bucket = spec.pool[label];
    s.x = bucket[rng.below(bucket.size())].x;
  } else {
    const auto& proto = spec.prototypes[label];
    s.x.resize(spec.features);
    for (std::size_t f = 0; f < spec.features; ++f) s.x[f] = proto[f] + spec.sigma * rng.normal();
  }
  if (mask && !mask->empty())
    for (std::size_t f = 0; f < spec.features; ++f)
      if (!(*mask)[f]) s.x[f] = 0.0;
  return s;
}

}  // namespace detail

// n samples with labels from `prior`, optionally feature-masked.
inline std::vector<Sample> sample_with_prior(const DataStreamSpec& spec,
                                             std::span<const double> prior, std::size_t n,
                                             Rng& rng, const std::vector<bool>* mask = nullptr) {
  std::vector<Sample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    out.push_back(detail::draw_sample(spec, detail::draw_label(prior, rng), mask, rng));
  return out;
}

// Class-balanced draw under the current prototypes (test sets, probe sets).
inline std::vector<Sample> sample_uniform(const DataStreamSpec& spec, std::size_t n, Rng& rng) {
  std::vector<double> prior(spec.classes, 1.0 / static_cast<double>(spec.classes));
  return sample_with_prior(spec, prior, n, rng);
}

// Node `node`'s stream at tick t: labels from its prior after pending
// drifts, features around the class prototype, masked per node.
inline std::vector<Sample> sample_batch(const DataStreamSpec& spec, NodeId node, Tick t,
                                        std::size_t n, Rng& rng) {
  if (n < 1) throw UsageError("batch size must be at least 1");
  if (node >= spec.priors.size()) throw UsageError("node has no prior");
  const bool pending = !spec.schedule.empty() && spec.schedule.front().tick < t;
  if (pending) {
    DataStreamSpec r = resolve_at(spec, t);
    return sample_batch(r, node, t, n, rng);
  }
  const std::vector<bool>* mask = node < spec.masks.size() ? &spec.masks[node] : nullptr;
  return sample_with_prior(spec, spec.priors[node], n, rng, mask);
}

// ---------------------------------------------------------------------------
// CSV ingestion

struct CsvSchema {
  std::string label_column = "label";
  std::vector<std::string> feature_columns;  // empty: every column except the label
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t features = 0;
  std::size_t classes = 0;
  std::vector<std::string> feature_names;
  std::vector<std::string> label_names;  // dense index -> original label text
};

// Labels are re-indexed densely from 0: numerically ascending when every
// label is an integer, lexicographically otherwise.
inline Dataset load_csv_dataset(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path + "'", 0);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("empty file", 0);
  auto header = csv::split_line(line);
  for (auto& h : header) h = std::string(csv::trim(h));

  auto column_of = [&](const std::string& name) -> std::size_t {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw IngestionError("missing column '" + name + "'", 1);
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t label_col = column_of(schema.label_column);
  std::vector<std::size_t> feat_cols;
  Dataset ds;
  if (schema.feature_columns.empty()) {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (c != label_col) {
        feat_cols.push_back(c);
        ds.feature_names.push_back(header[c]);
      }
  } else {
    for (const auto& name : schema.feature_columns) {
      feat_cols.push_back(column_of(name));
      ds.feature_names.push_back(name);
    }
  }
  if (feat_cols.empty()) throw IngestionError("no feature columns", 1);

  std::vector<std::string> raw_labels;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    auto fields = csv::split_line(line);
    if (fields.size() != header.size())
      throw IngestionError("expected " + std::to_string(header.size()) + " fields, got " +
                               std::to_string(fields.size()),
                           lineno);
    Sample s;
    s.x.reserve(feat_cols.size());
    for (std::size_t k = 0; k < feat_cols.size(); ++k) {
      auto v = csv::parse_double(fields[feat_cols[k]]);
      if (!v)
        throw IngestionError("non-numeric value '" + fields[feat_cols[k]] + "' in column '" +
                                 ds.feature_names[k] + "'",
                             lineno);
      s.x.push_back(*v);
    }
    std::string label(csv::trim(fields[label_col]));
    if (label.empty()) throw IngestionError("empty label", lineno);
    raw_labels.push_back(std::move(label));
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw IngestionError("no data rows", 0);

  const bool numeric = std::all_of(raw_labels.begin(), raw_labels.end(),
                                   [](const std::string& l) { return csv::parse_int(l).has_value(); });
  std::vector<std::string> distinct = raw_labels;
  if (numeric)
    std::sort(distinct.begin(), distinct.end(), [](const std::string& a, const std::string& b) {
      return *csv::parse_int(a) < *csv::parse_int(b);
    });
  else
    std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end(),
                             [&](const std::string& a, const std::string& b) {
                               return numeric ? *csv::parse_int(a) == *csv::parse_int(b) : a == b;
                             }),
                 distinct.end());
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < distinct.size(); ++i) index[distinct[i]] = i;
  for (std::size_t r = 0; r < raw_labels.size(); ++r) {
    if (numeric) {
      const auto v = *csv::parse_int(raw_labels[r]);
      auto it = std::find_if(distinct.begin(), distinct.end(),
                             [&](const std::string& d) { return *csv::parse_int(d) == v; });
      ds.samples[r].y = static_cast<std::size_t>(it - distinct.begin());
    } else {
      ds.samples[r].y = index.at(raw_labels[r]);
    }
  }
  ds.features = feat_cols.size();
  ds.classes = distinct.size();
  ds.label_names = distinct;
  return ds;
}

inline void save_csv_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path + "'", 0);
  for (std::size_t f = 0; f < ds.features; ++f) {
    const std::string name =
        f < ds.feature_names.size() ? ds.feature_names[f] : "f" + std::to_string(f);
    out << csv::quote_if_needed(name) << ',';
  }
  out << "label\n";
  for (const Sample& s : ds.samples) {
    for (double v : s.x) out << csv::format_double(v) << ',';
    out << csv::quote_if_needed(s.y < ds.label_names.size() ? ds.label_names[s.y]
                                                            : std::to_string(s.y))
        << '\n';
  }
}

// Bucket rows by class for a pooled stream.
inline std::vector<std::vector<Sample>> pool_by_class(const Dataset& ds) {
  std::vector<std::vector<Sample>> pool(ds.classes);
  for (const Sample& s : ds.samples) pool[s.y].push_back(s);
  return pool;
}

}  // namespace nodelearn
