#pragma once

#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "json.hpp"
#include "nodelearn/engine.hpp"
#include "nodelearn/errors.hpp"

namespace nodelearn {

constexpr int kCheckpointFormatVersion = 1;

namespace ckpt {

// JSON has no NaN or infinity; those travel as strings.
inline json real(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

inline double real_from(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  throw CheckpointError("bad real value '" + s + "'");
}

inline json reals(std::span<const double> v) {
  json a = json::array();
  for (double x : v) a.push_back(real(x));
  return a;
}

inline std::vector<double> reals_from(const json& j) {
  std::vector<double> v;
  v.reserve(j.size());
  for (const auto& x : j) v.push_back(real_from(x));
  return v;
}

inline json sample(const Sample& s) { return {{"x", reals(s.x)}, {"y", s.y}}; }
inline Sample sample(const json& j) { return {reals_from(j.at("x")), j.at("y").get<std::size_t>()}; }

inline json samples(std::span<const Sample> v) {
  json a = json::array();
  for (const auto& s : v) a.push_back(sample(s));
  return a;
}
inline std::vector<Sample> samples(const json& j) {
  std::vector<Sample> v;
  for (const auto& s : j) v.push_back(sample(s));
  return v;
}

inline json node(const NodeState& n) {
  json replay = json::array();
  for (const auto& e : n.replay.entries()) replay.push_back({{"s", sample(e.sample)}, {"syn", e.synthetic}});
  return {
      {"id", n.id},
      {"params",
       {{"features", n.params.shape.features}, {"hidden", n.params.shape.hidden},
        {"classes", n.params.shape.classes}, {"values", reals(n.params.values)},
        {"version", n.params.version}}},
      {"context",
       {{"energy", real(n.context.energy_fraction)}, {"connectivity", real(n.context.connectivity)},
        {"salience", real(n.context.salience)}, {"speed", real(n.context.mobility_speed)},
        {"mask", n.context.modality_mask}, {"baseline", real(n.context.loss_baseline)}}},
      {"battery", {real(n.battery.capacity), real(n.battery.level)}},
      {"replay_capacity", n.replay.capacity()},
      {"replay", replay},
      {"updates", n.updates},
      {"skipped", n.skipped_updates},
      {"samples_seen", n.samples_seen},
      {"round_samples", n.round_samples},
      {"alive", n.alive},
      {"asleep", n.asleep},
  };
}

inline void restore_node(NodeState& n, const json& j) {
  const auto& p = j.at("params");
  n.params.shape = {p.at("features").get<std::size_t>(), p.at("hidden").get<std::size_t>(),
                    p.at("classes").get<std::size_t>()};
  n.params.values = reals_from(p.at("values"));
  n.params.version = p.at("version").get<std::uint64_t>();
  if (n.params.values.size() != n.params.shape.total())
    throw CheckpointError("node " + std::to_string(n.id) + ": parameter count mismatch");
  const auto& c = j.at("context");
  n.context.energy_fraction = real_from(c.at("energy"));
  n.context.connectivity = real_from(c.at("connectivity"));
  n.context.salience = real_from(c.at("salience"));
  n.context.mobility_speed = real_from(c.at("speed"));
  n.context.modality_mask = c.at("mask").get<int>();
  n.context.loss_baseline = real_from(c.at("baseline"));
  n.battery.capacity = real_from(j.at("battery").at(0));
  n.battery.level = real_from(j.at("battery").at(1));
  std::deque<ReplayEntry> entries;
  for (const auto& e : j.at("replay")) entries.push_back({sample(e.at("s")), e.at("syn").get<bool>()});
  n.replay.restore(j.at("replay_capacity").get<std::size_t>(), std::move(entries));
  n.updates = j.at("updates").get<std::uint64_t>();
  n.skipped_updates = j.at("skipped").get<std::uint64_t>();
  n.samples_seen = j.at("samples_seen").get<std::uint64_t>();
  n.round_samples = j.at("round_samples").get<std::uint64_t>();
  n.alive = j.at("alive").get<bool>();
  n.asleep = j.at("asleep").get<bool>();
}

inline json points(const std::vector<Vec2>& v) {
  json a = json::array();
  for (const auto& p : v) a.push_back({real(p.x), real(p.y)});
  return a;
}
inline std::vector<Vec2> points(const json& j) {
  std::vector<Vec2> v;
  for (const auto& p : j) v.push_back({real_from(p.at(0)), real_from(p.at(1))});
  return v;
}

inline json record(const MetricRecord& r) {
  return {r.tick, r.node, real(r.accuracy), real(r.energy_j), real(r.compute_energy_j),
          r.bytes_tx, r.bytes_rx, r.updates, r.skipped, r.events};
}
inline MetricRecord record(const json& j) {
  return {j.at(0).get<Tick>(),          j.at(1).get<std::int64_t>(),  real_from(j.at(2)),
          real_from(j.at(3)),                real_from(j.at(4)),                j.at(5).get<std::uint64_t>(),
          j.at(6).get<std::uint64_t>(), j.at(7).get<std::uint64_t>(), j.at(8).get<std::uint64_t>(),
          j.at(9).get<std::string>()};
}

}  // namespace ckpt

// Everything the tick function reads, so restore(checkpoint(s)) continues
// bitwise-identically. Evaluation sets are regenerated from (seed, epoch).
inline json checkpoint(const SimState& s, const ScenarioConfig& cfg) {
  using namespace ckpt;
  json nodes = json::array();
  for (const auto& n : s.nodes) nodes.push_back(node(n));
  json counters = json::array();
  for (const auto& c : s.counters)
    counters.push_back({real(c.energy), real(c.compute), c.bytes_tx, c.bytes_rx, c.tags});
  json clusters = json::array();
  for (const auto& c : s.clusters)
    clusters.push_back({c.id, c.members, c.coordinator, c.formed_at, c.ttl});
  json trust = json::array();
  for (NodeId i = 0; i < s.trust.rows.size(); ++i)
    for (const auto& [j, v] : s.trust.rows[i]) trust.push_back({i, j, real(v)});
  json prototypes = json::array();
  for (const auto& p : s.data.prototypes) prototypes.push_back(reals(p));
  json priors = json::array();
  for (const auto& p : s.data.priors) priors.push_back(reals(p));
  json schedule = json::array();
  for (const auto& d : s.data.schedule)
    schedule.push_back({d.tick, static_cast<int>(d.kind), real(d.magnitude), d.axes[0], d.axes[1]});
  json pool = json::array();
  for (const auto& bucket : s.data.pool) pool.push_back(samples(bucket));
  json leases = json::array();
  for (const auto& l : s.offload.leases)
    leases.push_back({l.owner, l.host, samples(l.entries), l.bytes, l.expires_at});
  json stale = json::array();
  for (const auto& [o, h] : s.offload.pending_stale) stale.push_back({o, h});
  json ledger_entries = json::array();
  for (const auto& e : s.ledger.entries)
    ledger_entries.push_back({e.tick, e.node, static_cast<int>(e.kind), real(e.joules)});
  json snapshots = json::array();
  for (const auto& v : s.ledger.snapshots) snapshots.push_back(reals(v));
  json records = json::array();
  for (const auto& r : s.records) records.push_back(record(r));
  json trust_log = json::array();
  for (const auto& t : s.trust_log) trust_log.push_back({t.tick, t.i, t.j, real(t.trust)});
  json success = json::array();
  for (const auto& c : s.contact_success) success.push_back(c ? real(*c) : json(nullptr));
  json trace = json::array();
  for (const auto& r : s.mobility.trace) trace.push_back({r.t, r.from, r.to, real(r.distance)});

  return {
      {"format", "nodelearn-checkpoint"},
      {"format_version", kCheckpointFormatVersion},
      {"seed", cfg.seed},
      {"node_count", s.nodes.size()},
      {"tick", s.tick},
      {"nodes", nodes},
      {"counters", counters},
      {"mobility",
       {{"model", static_cast<int>(s.mobility.model)}, {"width", real(s.mobility.arena_width)},
        {"height", real(s.mobility.arena_height)}, {"min_speed", real(s.mobility.min_speed)},
        {"max_speed", real(s.mobility.max_speed)}, {"seed", s.mobility.seed},
        {"tick", s.mobility.tick}, {"positions", points(s.mobility.positions)},
        {"waypoints", points(s.mobility.waypoints)}, {"speeds", reals(s.mobility.speeds)},
        {"draws", s.mobility.waypoint_draws}, {"trace", trace},
        {"cursor", s.mobility.trace_cursor}, {"exhausted", s.mobility.exhausted}}},
      {"clusters", clusters},
      {"next_cluster_id", s.next_cluster_id},
      {"trust", {{"decay", real(s.trust.decay)}, {"default", real(s.trust.default_score)}, {"rows", trust}}},
      {"data",
       {{"classes", s.data.classes}, {"features", s.data.features}, {"prototypes", prototypes},
        {"sigma", real(s.data.sigma)}, {"priors", priors}, {"schedule", schedule},
        {"masks", s.data.masks}, {"pool", pool}, {"seed", s.data.seed}}},
      {"data_epoch", s.data_epoch},
      {"offload", {{"leases", leases}, {"stale", stale}}},
      {"ledger",
       {{"initial", reals(s.ledger.initial)}, {"entries", ledger_entries},
        {"snapshot_ticks", s.ledger.snapshot_ticks}, {"snapshots", snapshots}}},
      {"records", records},
      {"events", s.events},
      {"packets", s.packets},
      {"trust_log", trust_log},
      {"contact_success", success},
      {"drift_onsets", s.drift_onsets},
      {"population_tags", s.population_tags},
      {"halted", s.halted},
      {"server_alive", s.server_alive},
  };
}

// Rebuild a state from a checkpoint taken under the same scenario. Refuses
// other format versions, node counts or seeds.
inline SimState restore(const json& j, const ScenarioConfig& cfg) {
  using namespace ckpt;
  if (!j.is_object() || j.value("format", "") != "nodelearn-checkpoint")
    throw CheckpointError("not a checkpoint file");
  const int version = j.value("format_version", -1);
  if (version != kCheckpointFormatVersion)
    throw CheckpointError("checkpoint format version " + std::to_string(version) +
                          " is not supported (expected " + std::to_string(kCheckpointFormatVersion) + ")");
  const auto n = j.at("node_count").get<std::size_t>();
  if (n != cfg.node_count())
    throw CheckpointError("checkpoint has " + std::to_string(n) + " nodes but the config has " +
                          std::to_string(cfg.node_count()));
  if (j.at("seed").get<std::uint64_t>() != cfg.seed)
    throw CheckpointError("checkpoint seed does not match the config seed");

  try {
    SimState s = initial_state(cfg);
    s.tick = j.at("tick").get<Tick>();
    for (std::size_t i = 0; i < n; ++i) restore_node(s.nodes[i], j.at("nodes").at(i));
    for (std::size_t i = 0; i < n; ++i) {
      const auto& c = j.at("counters").at(i);
      s.counters[i] = {real_from(c.at(0)), real_from(c.at(1)), c.at(2).get<std::uint64_t>(),
                       c.at(3).get<std::uint64_t>(), c.at(4).get<std::vector<std::string>>()};
    }
    const auto& m = j.at("mobility");
    s.mobility.model = static_cast<MobilityModel>(m.at("model").get<int>());
    s.mobility.arena_width = real_from(m.at("width"));
    s.mobility.arena_height = real_from(m.at("height"));
    s.mobility.min_speed = real_from(m.at("min_speed"));
    s.mobility.max_speed = real_from(m.at("max_speed"));
    s.mobility.seed = m.at("seed").get<std::uint64_t>();
    s.mobility.tick = m.at("tick").get<Tick>();
    s.mobility.positions = points(m.at("positions"));
    s.mobility.waypoints = points(m.at("waypoints"));
    s.mobility.speeds = reals_from(m.at("speeds"));
    s.mobility.waypoint_draws = m.at("draws").get<std::vector<std::uint64_t>>();
    s.mobility.trace.clear();
    for (const auto& r : m.at("trace"))
      s.mobility.trace.push_back({r.at(0).get<Tick>(), r.at(1).get<NodeId>(), r.at(2).get<NodeId>(),
                                  real_from(r.at(3))});
    s.mobility.trace_cursor = m.at("cursor").get<std::size_t>();
    s.mobility.exhausted = m.at("exhausted").get<bool>();

    s.clusters.clear();
    for (const auto& c : j.at("clusters"))
      s.clusters.push_back({c.at(0).get<std::uint64_t>(), c.at(1).get<std::vector<NodeId>>(),
                            c.at(2).get<NodeId>(), c.at(3).get<Tick>(), c.at(4).get<Tick>()});
    s.next_cluster_id = j.at("next_cluster_id").get<std::uint64_t>();
    const auto& t = j.at("trust");
    s.trust = TrustGraph(n, real_from(t.at("decay")), real_from(t.at("default")));
    for (const auto& r : t.at("rows")) s.trust.rows.at(r.at(0).get<NodeId>())[r.at(1).get<NodeId>()] = real_from(r.at(2));

    const auto& d = j.at("data");
    s.data.classes = d.at("classes").get<std::size_t>();
    s.data.features = d.at("features").get<std::size_t>();
    s.data.prototypes.clear();
    for (const auto& p : d.at("prototypes")) s.data.prototypes.push_back(reals_from(p));
    s.data.sigma = real_from(d.at("sigma"));
    s.data.priors.clear();
    for (const auto& p : d.at("priors")) s.data.priors.push_back(reals_from(p));
    s.data.schedule.clear();
    for (const auto& e : d.at("schedule")) {
      DriftEvent ev;
      ev.tick = e.at(0).get<Tick>();
      ev.kind = static_cast<DriftKind>(e.at(1).get<int>());
      ev.magnitude = real_from(e.at(2));
      ev.axes[0] = e.at(3).get<std::size_t>();
      ev.axes[1] = e.at(4).get<std::size_t>();
      s.data.schedule.push_back(ev);
    }
    s.data.masks = d.at("masks").get<std::vector<std::vector<bool>>>();
    s.data.pool.clear();
    for (const auto& b : d.at("pool")) s.data.pool.push_back(samples(b));
    s.data.seed = d.at("seed").get<std::uint64_t>();
    s.data_epoch = j.at("data_epoch").get<std::uint64_t>();

    s.offload = {};
    for (const auto& l : j.at("offload").at("leases"))
      s.offload.leases.push_back({l.at(0).get<NodeId>(), l.at(1).get<NodeId>(), samples(l.at(2)),
                                  l.at(3).get<std::uint64_t>(), l.at(4).get<Tick>()});
    for (const auto& p : j.at("offload").at("stale"))
      s.offload.pending_stale.insert({p.at(0).get<NodeId>(), p.at(1).get<NodeId>()});

    const auto& L = j.at("ledger");
    s.ledger = {};
    s.ledger.initial = reals_from(L.at("initial"));
    for (const auto& e : L.at("entries"))
      s.ledger.entries.push_back({e.at(0).get<Tick>(), e.at(1).get<NodeId>(),
                                  static_cast<EnergyKind>(e.at(2).get<int>()), real_from(e.at(3))});
    s.ledger.snapshot_ticks = L.at("snapshot_ticks").get<std::vector<Tick>>();
    for (const auto& v : L.at("snapshots")) s.ledger.snapshots.push_back(reals_from(v));

    s.records.clear();
    for (const auto& r : j.at("records")) s.records.push_back(record(r));
    s.events = j.at("events").get<std::vector<json>>();
    s.packets = j.at("packets").get<std::vector<json>>();
    s.trust_log.clear();
    for (const auto& r : j.at("trust_log"))
      s.trust_log.push_back({r.at(0).get<Tick>(), r.at(1).get<NodeId>(), r.at(2).get<NodeId>(), real_from(r.at(3))});
    s.contact_success.clear();
    for (const auto& c : j.at("contact_success"))
      s.contact_success.push_back(c.is_null() ? std::nullopt : std::optional<double>(real_from(c)));
    s.drift_onsets = j.at("drift_onsets").get<std::vector<Tick>>();
    s.population_tags = j.at("population_tags").get<std::vector<std::string>>();
    s.halted = j.at("halted").get<bool>();
    s.server_alive = j.at("server_alive").get<bool>();

    detail::regenerate_eval_sets(s, cfg);
    return s;
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint: ") + e.what());
  }
}

inline void save_checkpoint(const std::string& path, const SimState& s, const ScenarioConfig& cfg) {
  std::ofstream out(path);
  if (!out) throw CheckpointError("cannot write checkpoint '" + path + "'");
  out << checkpoint(s, cfg).dump() << '\n';
}

inline SimState load_checkpoint(const std::string& path, const ScenarioConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw CheckpointError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  return restore(j, cfg);
}

}  // namespace nodelearn
