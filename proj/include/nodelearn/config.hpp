#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "nodelearn/context.hpp"
#include "nodelearn/datagen.hpp"
#include "nodelearn/errors.hpp"
#include "nodelearn/exchange.hpp"
#include "nodelearn/model.hpp"
#include "nodelearn/network.hpp"
#include "nodelearn/node.hpp"
#include "nodelearn/resources.hpp"

namespace nodelearn {

using json = nlohmann::json;

enum class Regime { isolated, federated, gossip, node_learning };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::isolated: return "isolated";
    case Regime::federated: return "federated";
    case Regime::gossip: return "gossip";
    case Regime::node_learning: return "node-learning";
  }
  return "?";
}

inline std::optional<Regime> parse_regime(const std::string& s) {
  if (s == "isolated") return Regime::isolated;
  if (s == "federated") return Regime::federated;
  if (s == "gossip") return Regime::gossip;
  if (s == "node-learning") return Regime::node_learning;
  return std::nullopt;
}

struct NodeTemplate {
  std::string capacity = "npu";
  std::string radio = "wifi";
  std::size_t replay_capacity = 64;
};

// Fully resolved per-node assignment.
struct NodeSpec {
  std::string template_name = "default";
  CapacityProfile capacity;
  RadioProfile radio;
  std::size_t replay_capacity = 64;
  AdversaryKind adversary = AdversaryKind::none;
  double adversary_scale = 0.0;
  Tick adversary_start = 0;  // honest until this tick
};

struct DataConfig {
  std::size_t classes = 5;
  std::size_t features = 10;
  double separation = 3.0;                      // prototype scale in units of sigma
  std::optional<double> target_bayes_accuracy;  // overrides separation when set
  double sigma = 1.0;
  std::string partition = "dirichlet";          // dirichlet | iid | explicit
  double alpha = 0.5;
  std::vector<std::vector<double>> priors;      // explicit partition
  std::string csv_path;                         // pooled data instead of Gaussians
  std::string label_column = "label";
  std::vector<std::string> csv_features;
  std::vector<DriftEvent> drift;
  std::vector<std::vector<bool>> masks;
  std::size_t test_size = 500;
  std::size_t validation_size = 40;
  std::size_t probe_size = 20;
};

struct MobilityConfig {
  std::string model = "static";  // static | random-waypoint | trace
  std::string layout = "grid";   // grid | ring | positions (static only)
  double spacing = 10.0;
  std::vector<Vec2> positions;
  double width = 100.0;
  double height = 100.0;
  double min_speed = 0.5;
  double max_speed = 2.0;
  std::string trace_path;
};

struct ExchangeConfig {
  MergePolicy policy;
  std::uint64_t budget_bytes = 1'000'000;  // per receiver per tick
  Tick cadence = 1;                        // exchange every `cadence` ticks
  bool relay = true;
  bool cluster_summaries = false;          // coordinators also send a cluster probe-logits packet
  bool merge_before_step = false;
};

struct TrustConfig {
  double decay = 0.9;
  double initial = 0.5;
  double utility_scale = 0.02;
};

struct EnergyConfig {
  double step_joules = 1e-3;
  double coordinator_joules = 1e-4;  // per tick of coordinator duty
  double sleep_threshold = 0.1;
  bool role_rotation = true;
  bool context_gate = true;
};

struct ReplayConfig {
  std::size_t insert_per_tick = 1;
  std::size_t per_step = 0;  // replay samples appended to each local batch
};

struct CoalitionConfig {
  bool enabled = true;
  Tick ttl = 10;
};

struct OffloadConfig {
  bool enabled = false;
};

struct FederatedConfig {
  std::optional<NodeId> server_host;  // empty: virtual always-on server
};

struct DropoutEvent {
  Tick tick = 0;
  std::vector<NodeId> nodes;  // resolved list
  double fraction = 0.0;      // as written, for the echo
  std::vector<NodeId> include;
};

struct MetricsConfig {
  Tick cadence = 1;
  double epsilon = 0.02;
  Tick al_window = 20;
  bool epi_compute_only = false;
  bool ce_time_averaged = false;
};

struct OutputConfig {
  bool packets = false;          // write packets.jsonl
  bool packet_payloads = false;  // include payloads in packets.jsonl
  bool trust_snapshots = false;  // write trust.csv
};

struct ScenarioConfig {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  Tick ticks = 100;
  double tick_seconds = 1.0;
  Regime regime = Regime::node_learning;
  std::vector<NodeSpec> nodes;
  TrainingConfig training;
  std::optional<std::size_t> local_steps;  // empty: floor(compute score), at least 1
  bool common_init = true;                 // every node starts from the same parameters
  DataConfig data;
  MobilityConfig mobility;
  ContextParams context;
  ExchangeConfig exchange;
  TrustConfig trust;
  EnergyConfig energy;
  ReplayConfig replay;
  CoalitionConfig coalition;
  OffloadConfig offload;
  FederatedConfig federated;
  std::vector<DropoutEvent> dropout;
  MetricsConfig metrics;
  OutputConfig output;

  std::size_t node_count() const { return nodes.size(); }
  std::size_t steps_for(NodeId i) const {
    if (local_steps) return *local_steps;
    return std::max<std::size_t>(1, static_cast<std::size_t>(nodes[i].capacity.compute_score));
  }
};

// ---------------------------------------------------------------------------
// Parsing

struct Diagnostics {
  std::vector<std::string> errors;
  std::vector<std::string> warnings;
  bool strict = true;
  bool ok() const { return errors.empty(); }
};

namespace detail {

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "." + key;
}

// Typed view over one JSON object that records which keys were consumed so
// leftovers can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, Diagnostics& diag)
      : j_(j), path_(std::move(path)), diag_(diag) {
    if (!j_.is_object()) {
      error("", "expected an object");
      valid_ = false;
    }
  }
  bool valid() const { return valid_; }
  const std::string& path() const { return path_; }
  bool has(const std::string& key) {
    if (!valid_ || !j_.contains(key)) return false;
    used_.insert(key);
    return true;
  }
  const json& raw(const std::string& key) {
    used_.insert(key);
    return j_.at(key);
  }
  std::string sub(const std::string& key) const { return join_path(path_, key); }

  void error(const std::string& key, const std::string& msg) {
    diag_.errors.push_back((key.empty() ? (path_.empty() ? "$" : path_) : sub(key)) + ": " + msg);
  }

  template <class T>
  void get(const std::string& key, T& out) {
    if (!has(key)) return;
    const json& v = j_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) return error(key, "expected a boolean");
      out = v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) return error(key, "expected a string");
      out = v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return error(key, "expected a number");
      out = v.get<T>();
      if (!std::isfinite(out)) return error(key, "must be finite");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) return error(key, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) out = v.get<T>();
        else error(key, "must be nonnegative");
      } else {
        out = v.get<T>();
      }
    }
  }

  template <class T>
  void get(const std::string& key, std::optional<T>& out) {
    if (!has(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T tmp{};
    const auto before = diag_.errors.size();
    get(key, tmp);
    if (diag_.errors.size() == before) out = tmp;
  }

  void positive(const std::string& key, double v) {
    if (!(v > 0.0)) error(key, "must be > 0");
  }
  void nonneg(const std::string& key, double v) {
    if (!(v >= 0.0)) error(key, "must be >= 0");
  }
  void unit(const std::string& key, double v) {
    if (!(v >= 0.0 && v <= 1.0)) error(key, "must lie in [0, 1]");
  }

  // Report keys that were never consumed.
  void finish() {
    if (!valid_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (used_.count(it.key())) continue;
      const std::string msg = sub(it.key()) + ": unknown key";
      if (diag_.strict) diag_.errors.push_back(msg);
      else diag_.warnings.push_back(msg);
    }
  }

 private:
  const json& j_;
  std::string path_;
  Diagnostics& diag_;
  std::set<std::string> used_;
  bool valid_ = true;
};

inline void read_capacity(const json& j, const std::string& path, CapacityProfile& c,
                          Diagnostics& d) {
  ObjectReader r(j, path, d);
  if (!r.valid()) return;
  std::string hw = to_string(c.hardware);
  r.get("memory_bytes", c.memory_bytes);
  r.get("compute_score", c.compute_score);
  r.get("battery_joules", c.battery_joules);
  r.get("harvest_rate", c.harvest_rate);
  r.get("hardware", hw);
  r.nonneg("compute_score", c.compute_score);
  r.nonneg("battery_joules", c.battery_joules);
  r.nonneg("harvest_rate", c.harvest_rate);
  try {
    c.hardware = parse_hardware_class(hw);
  } catch (const ConfigError& e) {
    r.error("hardware", e.what());
  }
  r.finish();
}

inline void read_radio(const json& j, const std::string& path, RadioProfile& p, Diagnostics& d) {
  ObjectReader r(j, path, d);
  if (!r.valid()) return;
  r.get("data_rate", p.data_rate);
  r.get("tx_energy", p.tx_energy);
  r.get("rx_energy", p.rx_energy);
  r.get("range", p.range);
  r.get("base_loss", p.base_loss);
  r.get("loss_exponent", p.loss_exponent);
  r.positive("data_rate", p.data_rate);
  r.nonneg("tx_energy", p.tx_energy);
  r.nonneg("rx_energy", p.rx_energy);
  r.nonneg("range", p.range);
  r.unit("base_loss", p.base_loss);
  r.nonneg("loss_exponent", p.loss_exponent);
  r.finish();
}

template <class T>
bool read_array(ObjectReader& r, const std::string& key, std::vector<T>& out) {
  if (!r.has(key)) return false;
  const json& v = r.raw(key);
  if (!v.is_array()) {
    r.error(key, "expected an array");
    return false;
  }
  try {
    out = v.get<std::vector<T>>();
  } catch (const json::exception&) {
    r.error(key, "array has elements of the wrong type");
    return false;
  }
  return true;
}

}  // namespace detail

struct ParsedConfig {
  ScenarioConfig config;
  Diagnostics diagnostics;
};

// Single validation path shared by `validate` and `run`: schema checks,
// cross-field rules and template resolution. Never throws on bad input;
// every problem lands in diagnostics.errors with its JSON path.
inline ParsedConfig parse_config(const json& doc, bool strict = true) {
  using detail::ObjectReader;
  ParsedConfig out;
  Diagnostics& d = out.diagnostics;
  d.strict = strict;
  ScenarioConfig& c = out.config;

  ObjectReader root(doc, "", d);
  if (!root.valid()) return out;

  root.get("name", c.name);
  std::int64_t seed = 1;
  root.get("seed", seed);
  c.seed = static_cast<std::uint64_t>(seed);
  root.get("ticks", c.ticks);
  if (c.ticks < 0) root.error("ticks", "must be >= 0");
  root.get("tick_seconds", c.tick_seconds);
  root.positive("tick_seconds", c.tick_seconds);
  std::string regime = "node-learning";
  root.get("regime", regime);
  if (auto r = parse_regime(regime)) c.regime = *r;
  else root.error("regime", "unknown regime '" + regime + "' (isolated | federated | gossip | node-learning)");

  // Profiles and templates.
  std::map<std::string, CapacityProfile> capacities;
  for (const char* n : {"mcu", "npu", "edge-server"}) capacities[n] = *builtin_capacity(n);
  std::map<std::string, RadioProfile> radios;
  for (const char* n : {"ble", "lora", "wifi"}) radios[n] = *builtin_radio(n);
  if (root.has("capacities")) {
    const json& j = root.raw("capacities");
    if (!j.is_object()) root.error("capacities", "expected an object");
    else
      for (auto it = j.begin(); it != j.end(); ++it) {
        CapacityProfile p = capacities.count(it.key()) ? capacities[it.key()] : CapacityProfile{};
        p.name = it.key();
        detail::read_capacity(it.value(), root.sub("capacities") + "." + it.key(), p, d);
        capacities[it.key()] = p;
      }
  }
  if (root.has("radios")) {
    const json& j = root.raw("radios");
    if (!j.is_object()) root.error("radios", "expected an object");
    else
      for (auto it = j.begin(); it != j.end(); ++it) {
        RadioProfile p = radios.count(it.key()) ? radios[it.key()] : RadioProfile{};
        p.name = it.key();
        detail::read_radio(it.value(), root.sub("radios") + "." + it.key(), p, d);
        radios[it.key()] = p;
      }
  }
  std::map<std::string, NodeTemplate> templates{{"default", NodeTemplate{}}};
  if (root.has("templates")) {
    const json& j = root.raw("templates");
    if (!j.is_object()) root.error("templates", "expected an object");
    else
      for (auto it = j.begin(); it != j.end(); ++it) {
        NodeTemplate t;
        ObjectReader r(it.value(), root.sub("templates") + "." + it.key(), d);
        if (!r.valid()) continue;
        r.get("capacity", t.capacity);
        r.get("radio", t.radio);
        r.get("replay_capacity", t.replay_capacity);
        if (!capacities.count(t.capacity)) r.error("capacity", "unknown capacity profile '" + t.capacity + "'");
        if (!radios.count(t.radio)) r.error("radio", "unknown radio profile '" + t.radio + "'");
        r.finish();
        templates[it.key()] = t;
      }
  }

  // Nodes.
  std::size_t count = 10;
  std::vector<std::string> assignment;
  struct AdvSpec {
    std::int64_t node;
    AdversaryKind kind;
    double scale;
    Tick start = 0;
  };
  std::vector<AdvSpec> adversaries;
  if (root.has("nodes")) {
    ObjectReader r(root.raw("nodes"), "nodes", d);
    if (r.valid()) {
      r.get("count", count);
      std::string default_template = "default";
      r.get("template", default_template);
      if (!templates.count(default_template))
        r.error("template", "unknown template '" + default_template + "'");
      if (r.has("groups")) {
        const json& g = r.raw("groups");
        if (!g.is_array()) r.error("groups", "expected an array");
        else
          for (std::size_t k = 0; k < g.size(); ++k) {
            ObjectReader gr(g[k], r.sub("groups") + "[" + std::to_string(k) + "]", d);
            if (!gr.valid()) continue;
            std::size_t n = 0;
            std::string tmpl;
            gr.get("count", n);
            gr.get("template", tmpl);
            if (!templates.count(tmpl)) gr.error("template", "unknown template '" + tmpl + "'");
            gr.finish();
            assignment.insert(assignment.end(), n, tmpl);
          }
      }
      if (assignment.size() > count)
        r.error("groups", "group counts exceed nodes.count (" + std::to_string(assignment.size()) +
                              " > " + std::to_string(count) + ")");
      while (assignment.size() < count) assignment.push_back(default_template);
      if (r.has("adversaries")) {
        const json& a = r.raw("adversaries");
        if (!a.is_array()) r.error("adversaries", "expected an array");
        else
          for (std::size_t k = 0; k < a.size(); ++k) {
            ObjectReader ar(a[k], r.sub("adversaries") + "[" + std::to_string(k) + "]", d);
            if (!ar.valid()) continue;
            AdvSpec s{-1, AdversaryKind::constant_garbage, 10.0, 0};
            std::string kind = "constant-garbage";
            ar.get("node", s.node);
            ar.get("kind", kind);
            ar.get("scale", s.scale);
            ar.get("start_tick", s.start);
            if (s.start < 0) ar.error("start_tick", "must be >= 0");
            if (kind != "constant-garbage") ar.error("kind", "unknown adversary kind '" + kind + "'");
            if (s.node < 0 || static_cast<std::size_t>(s.node) >= count)
              ar.error("node", "node id out of range");
            ar.nonneg("scale", s.scale);
            ar.finish();
            adversaries.push_back(s);
          }
      }
      r.finish();
    }
  } else {
    assignment.assign(count, "default");
  }
  if (count > 100000) root.error("nodes", "node count is unreasonably large");
  c.nodes.resize(assignment.size());
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    auto t = templates.count(assignment[i]) ? templates[assignment[i]] : NodeTemplate{};
    NodeSpec& n = c.nodes[i];
    n.template_name = assignment[i];
    n.capacity = capacities.count(t.capacity) ? capacities[t.capacity] : CapacityProfile{};
    n.radio = radios.count(t.radio) ? radios[t.radio] : RadioProfile{};
    n.replay_capacity = t.replay_capacity;
  }
  for (const auto& a : adversaries)
    if (a.node >= 0 && static_cast<std::size_t>(a.node) < c.nodes.size()) {
      c.nodes[a.node].adversary = a.kind;
      c.nodes[a.node].adversary_scale = a.scale;
      c.nodes[a.node].adversary_start = a.start;
    }

  // Model.
  if (root.has("model")) {
    ObjectReader r(root.raw("model"), "model", d);
    if (r.valid()) {
      std::string mode = c.training.mode == ModelMode::linear_softmax ? "linear" : "mlp";
      r.get("mode", mode);
      if (mode == "linear") c.training.mode = ModelMode::linear_softmax;
      else if (mode == "mlp") c.training.mode = ModelMode::one_hidden_layer;
      else r.error("mode", "unknown model mode '" + mode + "' (linear | mlp)");
      r.get("hidden", c.training.hidden_dim);
      r.get("learning_rate", c.training.learning_rate);
      r.get("batch_size", c.training.batch_size);
      r.get("l2", c.training.l2_penalty);
      r.get("local_steps", c.local_steps);
      std::string init = c.common_init ? "common" : "per-node";
      r.get("init", init);
      if (init == "common") c.common_init = true;
      else if (init == "per-node") c.common_init = false;
      else r.error("init", "expected common or per-node");
      r.positive("learning_rate", c.training.learning_rate);
      if (c.training.batch_size < 1) r.error("batch_size", "must be >= 1");
      if (c.training.mode == ModelMode::one_hidden_layer && c.training.hidden_dim < 1)
        r.error("hidden", "must be >= 1 in mlp mode");
      r.nonneg("l2", c.training.l2_penalty);
      r.finish();
    }
  }

  // Data.
  if (root.has("data")) {
    ObjectReader r(root.raw("data"), "data", d);
    if (r.valid()) {
      DataConfig& dc = c.data;
      r.get("classes", dc.classes);
      r.get("features", dc.features);
      r.get("separation", dc.separation);
      r.get("target_bayes_accuracy", dc.target_bayes_accuracy);
      r.get("sigma", dc.sigma);
      r.get("test_size", dc.test_size);
      r.get("validation_size", dc.validation_size);
      r.get("probe_size", dc.probe_size);
      r.nonneg("sigma", dc.sigma);
      r.nonneg("separation", dc.separation);
      if (dc.classes < 2) r.error("classes", "need at least 2 classes");
      if (dc.features < 1) r.error("features", "need at least 1 feature");
      if (dc.test_size < 1) r.error("test_size", "must be >= 1");
      if (dc.target_bayes_accuracy) {
        const double chance = 1.0 / static_cast<double>(std::max<std::size_t>(dc.classes, 2));
        if (!(*dc.target_bayes_accuracy > chance && *dc.target_bayes_accuracy < 1.0))
          r.error("target_bayes_accuracy", "must lie in (1/classes, 1)");
      }
      if (r.has("partition")) {
        ObjectReader pr(r.raw("partition"), "data.partition", d);
        if (pr.valid()) {
          pr.get("kind", dc.partition);
          pr.get("alpha", dc.alpha);
          if (pr.has("priors")) {
            try {
              dc.priors = pr.raw("priors").get<std::vector<std::vector<double>>>();
            } catch (const json::exception&) {
              pr.error("priors", "expected an array of number arrays");
            }
          }
          if (dc.partition == "dirichlet") pr.positive("alpha", dc.alpha);
          else if (dc.partition == "explicit") {
            if (dc.priors.size() != c.nodes.size())
              pr.error("priors", "need one prior per node");
            for (std::size_t i = 0; i < dc.priors.size(); ++i) {
              double s = 0.0;
              bool bad = dc.priors[i].size() != dc.classes;
              for (double v : dc.priors[i]) {
                bad = bad || !(v >= 0.0);
                s += v;
              }
              if (bad || std::abs(s - 1.0) > 1e-9)
                pr.error("priors", "prior " + std::to_string(i) +
                                       " must have one nonnegative entry per class summing to 1");
            }
          } else if (dc.partition != "iid")
            pr.error("kind", "unknown partition '" + dc.partition + "' (dirichlet | iid | explicit)");
          pr.finish();
        }
      }
      if (r.has("csv")) {
        ObjectReader cr(r.raw("csv"), "data.csv", d);
        if (cr.valid()) {
          cr.get("path", dc.csv_path);
          cr.get("label_column", dc.label_column);
          detail::read_array(cr, "features", dc.csv_features);
          if (dc.csv_path.empty()) cr.error("path", "required");
          cr.finish();
        }
      }
      if (r.has("drift")) {
        const json& a = r.raw("drift");
        if (!a.is_array()) r.error("drift", "expected an array");
        else
          for (std::size_t k = 0; k < a.size(); ++k) {
            ObjectReader er(a[k], "data.drift[" + std::to_string(k) + "]", d);
            if (!er.valid()) continue;
            DriftEvent ev;
            std::string kind = "prototype-rotation";
            std::vector<std::size_t> axes{0, 1};
            er.get("tick", ev.tick);
            er.get("kind", kind);
            er.get("magnitude", ev.magnitude);
            detail::read_array(er, "axes", axes);
            try {
              ev.kind = parse_drift_kind(kind);
            } catch (const ConfigError& e) {
              er.error("kind", e.what());
            }
            if (axes.size() != 2) er.error("axes", "need exactly two entries");
            else {
              ev.axes[0] = axes[0];
              ev.axes[1] = axes[1];
            }
            if (ev.tick < 0) er.error("tick", "must be >= 0");
            if (!dc.drift.empty() && ev.tick <= dc.drift.back().tick)
              er.error("tick", "drift ticks must be strictly increasing");
            if (ev.kind == DriftKind::prototype_rotation &&
                (ev.axes[0] >= dc.features || ev.axes[1] >= dc.features || ev.axes[0] == ev.axes[1]))
              er.error("axes", "rotation plane must name two distinct features");
            if (ev.kind == DriftKind::prior_shift &&
                (ev.axes[0] >= dc.classes || ev.axes[1] >= dc.classes))
              er.error("axes", "prior-shift classes out of range");
            if (ev.kind == DriftKind::covariate_scale && !(ev.magnitude >= 0.0))
              er.error("magnitude", "covariate scale must be >= 0");
            er.finish();
            dc.drift.push_back(ev);
          }
      }
      if (r.has("masks")) {
        try {
          dc.masks = r.raw("masks").get<std::vector<std::vector<bool>>>();
        } catch (const json::exception&) {
          r.error("masks", "expected an array of boolean arrays");
        }
        if (dc.masks.size() > c.nodes.size()) r.error("masks", "more masks than nodes");
        for (const auto& m : dc.masks)
          if (!m.empty() && m.size() != dc.features) r.error("masks", "mask length must equal features");
      }
      if (dc.csv_path.empty() && dc.features < dc.classes)
        r.error("features", "synthetic data needs features >= classes (orthogonal prototypes)");
      r.finish();
    }
  }
  if (c.data.target_bayes_accuracy && d.ok())
    c.data.separation = separation_for_bayes_accuracy(c.data.classes, *c.data.target_bayes_accuracy);

  // Mobility.
  if (root.has("mobility")) {
    ObjectReader r(root.raw("mobility"), "mobility", d);
    if (r.valid()) {
      MobilityConfig& m = c.mobility;
      r.get("model", m.model);
      r.get("layout", m.layout);
      r.get("spacing", m.spacing);
      r.get("width", m.width);
      r.get("height", m.height);
      r.get("min_speed", m.min_speed);
      r.get("max_speed", m.max_speed);
      r.get("trace", m.trace_path);
      if (r.has("positions")) {
        std::vector<std::vector<double>> raw;
        try {
          raw = r.raw("positions").get<std::vector<std::vector<double>>>();
        } catch (const json::exception&) {
          r.error("positions", "expected an array of [x, y] pairs");
        }
        for (const auto& p : raw) {
          if (p.size() != 2) {
            r.error("positions", "each position needs two coordinates");
            break;
          }
          m.positions.push_back({p[0], p[1]});
        }
      }
      if (m.model == "static") {
        if (m.layout == "positions") {
          if (m.positions.size() != c.nodes.size()) r.error("positions", "need one position per node");
        } else if (m.layout != "grid" && m.layout != "ring")
          r.error("layout", "unknown layout '" + m.layout + "' (grid | ring | positions)");
        r.nonneg("spacing", m.spacing);
      } else if (m.model == "random-waypoint") {
        r.positive("width", m.width);
        r.positive("height", m.height);
        r.nonneg("min_speed", m.min_speed);
        if (!(m.max_speed >= m.min_speed)) r.error("max_speed", "must be >= min_speed");
      } else if (m.model == "trace") {
        if (m.trace_path.empty()) r.error("trace", "trace mobility needs a trace file");
      } else {
        r.error("model", "unknown mobility model '" + m.model + "' (static | random-waypoint | trace)");
      }
      r.finish();
    }
  }

  // Context.
  if (root.has("context")) {
    ObjectReader r(root.raw("context"), "context", d);
    if (r.valid()) {
      r.get("decay", c.context.decay);
      r.get("baseline_decay", c.context.baseline_decay);
      r.get("gate", c.energy.context_gate);
      r.unit("decay", c.context.decay);
      r.unit("baseline_decay", c.context.baseline_decay);
      r.finish();
    }
  }

  // Exchange.
  if (root.has("exchange")) {
    ObjectReader r(root.raw("exchange"), "exchange", d);
    if (r.valid()) {
      ExchangeConfig& e = c.exchange;
      std::string policy = to_string(e.policy.kind), weights = to_string(e.policy.weights);
      std::string order = e.merge_before_step ? "before-step" : "after-step";
      r.get("policy", policy);
      r.get("weights", weights);
      r.get("distill_steps", e.policy.distill_steps);
      r.get("distill_rate", e.policy.distill_rate);
      r.get("prototype_replicas", e.policy.prototype_replicas);
      r.get("budget_bytes", e.budget_bytes);
      r.get("cadence", e.cadence);
      r.get("relay", e.relay);
      r.get("cluster_summaries", e.cluster_summaries);
      r.get("merge_order", order);
      try {
        e.policy.kind = parse_merge_kind(policy);
      } catch (const ConfigError& ex) {
        r.error("policy", ex.what());
      }
      try {
        e.policy.weights = parse_weight_rule(weights);
      } catch (const ConfigError& ex) {
        r.error("weights", ex.what());
      }
      if (order == "before-step") e.merge_before_step = true;
      else if (order == "after-step") e.merge_before_step = false;
      else r.error("merge_order", "expected after-step or before-step");
      r.positive("distill_rate", e.policy.distill_rate);
      if (e.cadence < 1) r.error("cadence", "must be >= 1");
      r.finish();
    }
  }

  if (root.has("trust")) {
    ObjectReader r(root.raw("trust"), "trust", d);
    if (r.valid()) {
      r.get("decay", c.trust.decay);
      r.get("initial", c.trust.initial);
      r.get("utility_scale", c.trust.utility_scale);
      r.unit("decay", c.trust.decay);
      r.unit("initial", c.trust.initial);
      r.positive("utility_scale", c.trust.utility_scale);
      r.finish();
    }
  }

  if (root.has("energy")) {
    ObjectReader r(root.raw("energy"), "energy", d);
    if (r.valid()) {
      r.get("step_joules", c.energy.step_joules);
      r.get("coordinator_joules", c.energy.coordinator_joules);
      r.get("sleep_threshold", c.energy.sleep_threshold);
      r.get("role_rotation", c.energy.role_rotation);
      r.nonneg("step_joules", c.energy.step_joules);
      r.nonneg("coordinator_joules", c.energy.coordinator_joules);
      r.unit("sleep_threshold", c.energy.sleep_threshold);
      r.finish();
    }
  }

  if (root.has("replay")) {
    ObjectReader r(root.raw("replay"), "replay", d);
    if (r.valid()) {
      r.get("insert_per_tick", c.replay.insert_per_tick);
      r.get("per_step", c.replay.per_step);
      r.finish();
    }
  }

  if (root.has("coalition")) {
    ObjectReader r(root.raw("coalition"), "coalition", d);
    if (r.valid()) {
      r.get("enabled", c.coalition.enabled);
      r.get("ttl", c.coalition.ttl);
      if (c.coalition.ttl < 0) r.error("ttl", "must be >= 0");
      r.finish();
    }
  }

  if (root.has("offload")) {
    ObjectReader r(root.raw("offload"), "offload", d);
    if (r.valid()) {
      r.get("enabled", c.offload.enabled);
      r.finish();
    }
  }

  if (root.has("federated")) {
    ObjectReader r(root.raw("federated"), "federated", d);
    if (r.valid()) {
      std::optional<std::int64_t> host;
      r.get("server_host", host);
      if (host) {
        if (*host < 0 || static_cast<std::size_t>(*host) >= c.nodes.size())
          r.error("server_host", "node id out of range");
        else c.federated.server_host = static_cast<NodeId>(*host);
      }
      r.finish();
    }
  }

  if (root.has("dropout")) {
    const json& a = root.raw("dropout");
    if (!a.is_array()) root.error("dropout", "expected an array");
    else
      for (std::size_t k = 0; k < a.size(); ++k) {
        ObjectReader r(a[k], "dropout[" + std::to_string(k) + "]", d);
        if (!r.valid()) continue;
        DropoutEvent ev;
        std::vector<std::int64_t> nodes, include;
        r.get("tick", ev.tick);
        r.get("fraction", ev.fraction);
        detail::read_array(r, "nodes", nodes);
        detail::read_array(r, "include", include);
        r.unit("fraction", ev.fraction);
        if (ev.tick < 0) r.error("tick", "must be >= 0");
        for (auto id : nodes)
          if (id < 0 || static_cast<std::size_t>(id) >= c.nodes.size()) r.error("nodes", "node id out of range");
          else ev.nodes.push_back(static_cast<NodeId>(id));
        for (auto id : include)
          if (id < 0 || static_cast<std::size_t>(id) >= c.nodes.size()) r.error("include", "node id out of range");
          else ev.include.push_back(static_cast<NodeId>(id));
        r.finish();
        c.dropout.push_back(ev);
      }
  }

  if (root.has("metrics")) {
    ObjectReader r(root.raw("metrics"), "metrics", d);
    if (r.valid()) {
      r.get("cadence", c.metrics.cadence);
      r.get("epsilon", c.metrics.epsilon);
      r.get("al_window", c.metrics.al_window);
      r.get("epi_compute_only", c.metrics.epi_compute_only);
      r.get("ce_time_averaged", c.metrics.ce_time_averaged);
      if (c.metrics.cadence < 1) r.error("cadence", "must be >= 1");
      r.positive("epsilon", c.metrics.epsilon);
      if (c.metrics.al_window < 1) r.error("al_window", "must be >= 1");
      r.finish();
    }
  }

  if (root.has("output")) {
    ObjectReader r(root.raw("output"), "output", d);
    if (r.valid()) {
      r.get("packets", c.output.packets);
      r.get("packet_payloads", c.output.packet_payloads);
      r.get("trust_snapshots", c.output.trust_snapshots);
      r.finish();
    }
  }

  root.finish();

  // Cross-field rules.
  if (c.regime == Regime::federated && c.exchange.policy.kind != MergeKind::average)
    d.errors.push_back(std::string("regime, exchange.policy: federated regime requires policy "
                                   "'average' (got '") +
                       to_string(c.exchange.policy.kind) + "')");
  if (c.regime == Regime::gossip && c.mobility.model != "static")
    d.errors.push_back("regime, mobility.model: gossip regime requires a static topology (got '" +
                       c.mobility.model + "')");
  if (c.federated.server_host && c.regime != Regime::federated)
    d.warnings.push_back("federated.server_host: ignored outside the federated regime");
  if (c.exchange.policy.kind == MergeKind::trunk && c.training.mode != ModelMode::one_hidden_layer &&
      c.regime == Regime::node_learning)
    d.errors.push_back("exchange.policy, model.mode: trunk exchange requires mode 'mlp'");
  for (std::size_t i = 0; i < c.nodes.size(); ++i)
    if (c.nodes[i].capacity.battery_joules <= 0.0)
      d.warnings.push_back("nodes[" + std::to_string(i) + "]: zero battery, node will never train");
  return out;
}

inline json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline std::string join_errors(const std::vector<std::string>& errors) {
  std::string s;
  for (const auto& e : errors) s += (s.empty() ? "" : "\n") + e;
  return s;
}

// Parse and throw ConfigError listing every violation.
inline ScenarioConfig parse_config_or_throw(const json& doc, bool strict = true) {
  auto p = parse_config(doc, strict);
  if (!p.diagnostics.ok()) throw ConfigError(join_errors(p.diagnostics.errors));
  return p.config;
}

// Set a dotted path inside a config document, creating objects on the way.
inline void set_json_path(json& doc, const std::string& dotted, const json& value) {
  json* cur = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("empty component in path '" + dotted + "'");
    if (dot == std::string::npos) {
      (*cur)[key] = value;
      return;
    }
    if (!cur->contains(key) || !(*cur)[key].is_object()) (*cur)[key] = json::object();
    cur = &(*cur)[key];
    start = dot + 1;
  }
}

// Short names accepted in sweep grids.
inline std::string expand_grid_key(const std::string& key) {
  static const std::map<std::string, std::string> alias{
      {"alpha", "data.partition.alpha"}, {"policy", "exchange.policy"},
      {"weights", "exchange.weights"},   {"nodes", "nodes.count"},
      {"budget", "exchange.budget_bytes"}, {"learning_rate", "model.learning_rate"},
  };
  auto it = alias.find(key);
  return it == alias.end() ? key : it->second;
}

// ---------------------------------------------------------------------------
// Resolved config echo

inline json to_json(const RadioProfile& r) {
  return {{"name", r.name}, {"data_rate", r.data_rate}, {"tx_energy", r.tx_energy},
          {"rx_energy", r.rx_energy}, {"range", r.range}, {"base_loss", r.base_loss},
          {"loss_exponent", r.loss_exponent}};
}

inline json to_json(const CapacityProfile& c) {
  return {{"name", c.name}, {"memory_bytes", c.memory_bytes}, {"compute_score", c.compute_score},
          {"battery_joules", c.battery_joules}, {"harvest_rate", c.harvest_rate},
          {"hardware", to_string(c.hardware)}};
}

inline json to_json(const ScenarioConfig& c) {
  json nodes = json::array();
  for (const auto& n : c.nodes) {
    json j{{"template", n.template_name}, {"capacity", to_json(n.capacity)},
           {"radio", to_json(n.radio)}, {"replay_capacity", n.replay_capacity}};
    if (n.adversary != AdversaryKind::none)
      j["adversary"] = {{"kind", "constant-garbage"}, {"scale", n.adversary_scale}, {"start_tick", n.adversary_start}};
    nodes.push_back(j);
  }
  json drift = json::array();
  for (const auto& e : c.data.drift)
    drift.push_back({{"tick", e.tick}, {"kind", to_string(e.kind)}, {"magnitude", e.magnitude},
                     {"axes", {e.axes[0], e.axes[1]}}});
  json dropout = json::array();
  for (const auto& e : c.dropout)
    dropout.push_back({{"tick", e.tick}, {"nodes", e.nodes}, {"fraction", e.fraction},
                       {"include", e.include}});
  json positions = json::array();
  for (const auto& p : c.mobility.positions) positions.push_back({p.x, p.y});
  json data{{"classes", c.data.classes},
            {"features", c.data.features},
            {"separation", c.data.separation},
            {"sigma", c.data.sigma},
            {"partition", {{"kind", c.data.partition}, {"alpha", c.data.alpha}, {"priors", c.data.priors}}},
            {"drift", drift},
            {"masks", c.data.masks},
            {"test_size", c.data.test_size},
            {"validation_size", c.data.validation_size},
            {"probe_size", c.data.probe_size}};
  if (c.data.target_bayes_accuracy) data["target_bayes_accuracy"] = *c.data.target_bayes_accuracy;
  if (!c.data.csv_path.empty())
    data["csv"] = {{"path", c.data.csv_path}, {"label_column", c.data.label_column},
                   {"features", c.data.csv_features}};
  json out{
      {"name", c.name},
      {"seed", c.seed},
      {"ticks", c.ticks},
      {"tick_seconds", c.tick_seconds},
      {"regime", to_string(c.regime)},
      {"nodes", nodes},
      {"model",
       {{"mode", c.training.mode == ModelMode::linear_softmax ? "linear" : "mlp"},
        {"hidden", c.training.hidden_dim},
        {"learning_rate", c.training.learning_rate},
        {"batch_size", c.training.batch_size},
        {"l2", c.training.l2_penalty},
        {"local_steps", c.local_steps ? json(*c.local_steps) : json(nullptr)},
        {"init", c.common_init ? "common" : "per-node"}}},
      {"data", data},
      {"mobility",
       {{"model", c.mobility.model}, {"layout", c.mobility.layout}, {"spacing", c.mobility.spacing},
        {"positions", positions}, {"width", c.mobility.width}, {"height", c.mobility.height},
        {"min_speed", c.mobility.min_speed}, {"max_speed", c.mobility.max_speed},
        {"trace", c.mobility.trace_path}}},
      {"context",
       {{"decay", c.context.decay}, {"baseline_decay", c.context.baseline_decay},
        {"gate", c.energy.context_gate}}},
      {"exchange",
       {{"policy", to_string(c.exchange.policy.kind)},
        {"weights", to_string(c.exchange.policy.weights)},
        {"distill_steps", c.exchange.policy.distill_steps},
        {"distill_rate", c.exchange.policy.distill_rate},
        {"prototype_replicas", c.exchange.policy.prototype_replicas},
        {"budget_bytes", c.exchange.budget_bytes},
        {"cadence", c.exchange.cadence},
        {"relay", c.exchange.relay},
        {"cluster_summaries", c.exchange.cluster_summaries},
        {"merge_order", c.exchange.merge_before_step ? "before-step" : "after-step"}}},
      {"trust",
       {{"decay", c.trust.decay}, {"initial", c.trust.initial},
        {"utility_scale", c.trust.utility_scale}}},
      {"energy",
       {{"step_joules", c.energy.step_joules},
        {"coordinator_joules", c.energy.coordinator_joules},
        {"sleep_threshold", c.energy.sleep_threshold},
        {"role_rotation", c.energy.role_rotation}}},
      {"replay", {{"insert_per_tick", c.replay.insert_per_tick}, {"per_step", c.replay.per_step}}},
      {"coalition", {{"enabled", c.coalition.enabled}, {"ttl", c.coalition.ttl}}},
      {"offload", {{"enabled", c.offload.enabled}}},
      {"federated",
       {{"server_host", c.federated.server_host ? json(*c.federated.server_host) : json(nullptr)}}},
      {"dropout", dropout},
      {"metrics",
       {{"cadence", c.metrics.cadence}, {"epsilon", c.metrics.epsilon},
        {"al_window", c.metrics.al_window}, {"epi_compute_only", c.metrics.epi_compute_only},
        {"ce_time_averaged", c.metrics.ce_time_averaged}}},
      {"output",
       {{"packets", c.output.packets}, {"packet_payloads", c.output.packet_payloads},
        {"trust_snapshots", c.output.trust_snapshots}}},
  };
  return out;
}

}  // namespace nodelearn
