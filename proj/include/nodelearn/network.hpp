#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include "nodelearn/csv.hpp"
#include "nodelearn/errors.hpp"
#include "nodelearn/rng.hpp"
#include "nodelearn/types.hpp"

namespace nodelearn {

// ---------------------------------------------------------------------------
// Radios

struct RadioProfile {
  std::string name = "custom";
  double data_rate = 1000.0;      // bytes / second
  double tx_energy = 1.5e-7;      // joules / byte
  double rx_energy = 1.0e-7;      // joules / byte
  double range = 30.0;            // metres
  double base_loss = 0.1;         // loss probability at the edge of range
  double loss_exponent = 2.0;

  void validate() const {
    if (!(data_rate > 0.0)) throw ConfigError("radio '" + name + "': data rate must be positive");
    if (!(tx_energy > 0.0) || !(rx_energy > 0.0))
      throw ConfigError("radio '" + name + "': per-byte energy must be positive");
    if (!(range > 0.0)) throw ConfigError("radio '" + name + "': range must be positive");
    if (!(base_loss >= 0.0 && base_loss <= 1.0))
      throw ConfigError("radio '" + name + "': base loss must lie in [0, 1]");
    if (!(loss_exponent >= 0.0))
      throw ConfigError("radio '" + name + "': loss exponent must be nonnegative");
  }

  // base * (d / range)^exponent, capped at 1.
  double loss_at(double distance) const {
    if (base_loss <= 0.0) return 0.0;
    const double r = std::max(0.0, distance) / range;
    return std::min(1.0, base_loss * std::pow(r, loss_exponent));
  }
};

// Order-of-magnitude defaults with a one-second tick; not measurements.
inline std::optional<RadioProfile> builtin_radio(const std::string& name) {
  if (name == "ble") return RadioProfile{"ble", 1000.0, 0.15e-6, 0.10e-6, 30.0, 0.1, 2.0};
  if (name == "lora") return RadioProfile{"lora", 50.0, 2.0e-6, 1.0e-6, 2000.0, 0.2, 1.0};
  if (name == "wifi") return RadioProfile{"wifi", 100000.0, 0.05e-6, 0.05e-6, 80.0, 0.05, 2.0};
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Mobility

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Vec2&, const Vec2&) = default;
};

inline double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

enum class MobilityModel { static_layout, random_waypoint, trace };

struct TraceContact {
  Tick t = 0;
  NodeId from = 0;
  NodeId to = 0;
  double distance = 0.0;
  friend bool operator==(const TraceContact&, const TraceContact&) = default;
};

struct MobilityState {
  MobilityModel model = MobilityModel::static_layout;
  double arena_width = 100.0;
  double arena_height = 100.0;
  double min_speed = 0.5;
  double max_speed = 2.0;
  std::uint64_t seed = 0;
  Tick tick = 0;
  std::vector<Vec2> positions;
  std::vector<Vec2> waypoints;
  std::vector<double> speeds;
  std::vector<std::uint64_t> waypoint_draws;  // per-node count of waypoints drawn so far
  std::vector<TraceContact> trace;            // sorted by (t, from, to)
  std::size_t trace_cursor = 0;               // first row with t >= tick
  bool exhausted = false;

  std::size_t size() const noexcept { return positions.size(); }
};

inline std::vector<Vec2> grid_layout(std::size_t n, double spacing) {
  const auto cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
  std::vector<Vec2> out;
  for (std::size_t i = 0; i < n; ++i)
    out.push_back({static_cast<double>(i % cols) * spacing, static_cast<double>(i / cols) * spacing});
  return out;
}

// Nodes evenly spaced on a circle with neighbour distance `spacing`.
inline std::vector<Vec2> ring_layout(std::size_t n, double spacing) {
  std::vector<Vec2> out;
  if (n == 1) return {{0.0, 0.0}};
  const double radius = spacing / (2.0 * std::sin(std::numbers::pi / static_cast<double>(n)));
  for (std::size_t i = 0; i < n; ++i) {
    const double a = 2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n);
    out.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return out;
}

namespace detail {

inline void draw_waypoint(MobilityState& m, std::size_t i) {
  Rng rng(m.seed, Stream::mobility, i, m.waypoint_draws[i]++);
  m.waypoints[i] = {rng.uniform(0.0, m.arena_width), rng.uniform(0.0, m.arena_height)};
  m.speeds[i] = rng.uniform(m.min_speed, m.max_speed);
}

}  // namespace detail

inline MobilityState make_random_waypoint(std::size_t n, double width, double height,
                                          double min_speed, double max_speed, std::uint64_t seed) {
  if (!(width > 0.0 && height > 0.0)) throw ConfigError("mobility: arena must have positive size");
  if (!(min_speed > 0.0 && max_speed >= min_speed))
    throw ConfigError("mobility: need 0 < min speed <= max speed");
  MobilityState m;
  m.model = MobilityModel::random_waypoint;
  m.arena_width = width;
  m.arena_height = height;
  m.min_speed = min_speed;
  m.max_speed = max_speed;
  m.seed = seed;
  m.positions.resize(n);
  m.waypoints.resize(n);
  m.speeds.assign(n, 0.0);
  m.waypoint_draws.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, Stream::mobility, i, ~0ULL);
    m.positions[i] = {rng.uniform(0.0, width), rng.uniform(0.0, height)};
    detail::draw_waypoint(m, i);
  }
  return m;
}

inline MobilityState make_static(std::vector<Vec2> positions) {
  MobilityState m;
  m.model = MobilityModel::static_layout;
  double w = 0.0, h = 0.0;
  for (const auto& p : positions) {
    w = std::max(w, p.x);
    h = std::max(h, p.y);
  }
  m.arena_width = w;
  m.arena_height = h;
  m.positions = std::move(positions);
  m.waypoints = m.positions;
  m.speeds.assign(m.positions.size(), 0.0);
  m.waypoint_draws.assign(m.positions.size(), 0);
  return m;
}

inline MobilityState make_trace(std::size_t n, std::vector<TraceContact> rows) {
  std::sort(rows.begin(), rows.end(), [](const TraceContact& a, const TraceContact& b) {
    return std::tie(a.t, a.from, a.to) < std::tie(b.t, b.from, b.to);
  });
  for (const auto& r : rows)
    if (r.from >= n || r.to >= n) throw ConfigError("trace references node outside population");
  MobilityState m;
  m.model = MobilityModel::trace;
  m.positions.assign(n, Vec2{});
  m.waypoints = m.positions;
  m.speeds.assign(n, 0.0);
  m.waypoint_draws.assign(n, 0);
  m.trace = std::move(rows);
  m.exhausted = m.trace.empty();
  return m;
}

// Contact trace CSV: header with columns t, from, to, distance.
inline std::vector<TraceContact> load_contact_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open trace '" + path + "'", 0);
  std::string line;
  if (!std::getline(in, line)) throw IngestionError("empty trace file", 0);
  auto header = csv::split_line(line);
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col[std::string(csv::trim(header[i]))] = i;
  for (const char* need : {"t", "from", "to", "distance"})
    if (!col.count(need)) throw IngestionError(std::string("missing column '") + need + "'", 1);
  std::vector<TraceContact> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (csv::trim(line).empty()) continue;
    auto f = csv::split_line(line);
    if (f.size() != header.size()) throw IngestionError("wrong field count", lineno);
    auto t = csv::parse_int(f[col["t"]]);
    auto from = csv::parse_int(f[col["from"]]);
    auto to = csv::parse_int(f[col["to"]]);
    auto d = csv::parse_double(f[col["distance"]]);
    if (!t || !from || !to || !d || *t < 0 || *from < 0 || *to < 0 || *d < 0.0)
      throw IngestionError("malformed trace row", lineno);
    rows.push_back({*t, static_cast<NodeId>(*from), static_cast<NodeId>(*to), *d});
  }
  if (rows.empty()) throw IngestionError("no data rows", 0);
  return rows;
}

// Advance mobility by dt ticks (random waypoint moves speed*dt metres toward
// its waypoint and draws a new one on arrival; static is the identity; trace
// advances its cursor and flags exhaustion after the last row).
inline MobilityState step_mobility(MobilityState m, double dt = 1.0) {
  if (!(dt > 0.0)) throw UsageError("mobility step needs dt > 0");
  m.tick += static_cast<Tick>(std::llround(dt));
  switch (m.model) {
    case MobilityModel::static_layout:
      break;
    case MobilityModel::random_waypoint:
      for (std::size_t i = 0; i < m.size(); ++i) {
        Vec2& p = m.positions[i];
        const Vec2 w = m.waypoints[i];
        const double dist = distance(p, w);
        const double step = m.speeds[i] * dt;
        if (dist <= step) {
          p = w;
          detail::draw_waypoint(m, i);
        } else {
          p.x += (w.x - p.x) / dist * step;
          p.y += (w.y - p.y) / dist * step;
        }
      }
      break;
    case MobilityModel::trace:
      while (m.trace_cursor < m.trace.size() && m.trace[m.trace_cursor].t < m.tick)
        ++m.trace_cursor;
      m.exhausted = m.trace_cursor >= m.trace.size();
      break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Contacts

struct ContactEvent {
  Tick time = 0;
  NodeId from = 0;
  NodeId to = 0;
  double distance = 0.0;
  double loss_prob = 0.0;
  std::uint64_t max_bytes = 0;
  friend bool operator==(const ContactEvent&, const ContactEvent&) = default;
};

// Directed i->j contact iff distance <= min(range_i, range_j) (inclusive).
// Loss and capacity come from the sender's profile, so unequal radios give
// asymmetric links. Output is sorted by (from, to). `active`, when given,
// excludes nodes that are dead or asleep.
inline std::vector<ContactEvent> compute_contacts(const MobilityState& m,
                                                  std::span<const RadioProfile> radios, Tick t,
                                                  double tick_seconds = 1.0,
                                                  const std::vector<bool>* active = nullptr) {
  if (radios.size() != m.size()) throw UsageError("need one radio profile per node");
  auto ok = [&](std::size_t i) { return !active || (*active)[i]; };
  auto make = [&](NodeId i, NodeId j, double d) {
    const RadioProfile& r = radios[i];
    return ContactEvent{t, i, j, d, r.loss_at(d),
                        static_cast<std::uint64_t>(std::floor(r.data_rate * tick_seconds))};
  };
  std::vector<ContactEvent> out;
  if (m.model == MobilityModel::trace) {
    auto it = std::lower_bound(m.trace.begin(), m.trace.end(), t,
                               [](const TraceContact& c, Tick v) { return c.t < v; });
    for (; it != m.trace.end() && it->t == t; ++it) {
      if (it->from == it->to || !ok(it->from) || !ok(it->to)) continue;
      if (it->distance <= std::min(radios[it->from].range, radios[it->to].range))
        out.push_back(make(it->from, it->to, it->distance));
    }
    return out;
  }
  for (NodeId i = 0; i < m.size(); ++i) {
    if (!ok(i)) continue;
    for (NodeId j = 0; j < m.size(); ++j) {
      if (i == j || !ok(j)) continue;
      const double d = distance(m.positions[i], m.positions[j]);
      if (d <= std::min(radios[i].range, radios[j].range)) out.push_back(make(i, j, d));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Energy

struct Battery {
  double capacity = 1.0;  // joules
  double level = 1.0;     // joules

  double fraction() const noexcept { return capacity > 0.0 ? level / capacity : 0.0; }
  bool can_afford(double joules) const noexcept { return level >= joules; }
  // Returns the amount actually stored (capped at capacity).
  double harvest(double joules) noexcept {
    const double add = std::min(std::max(0.0, joules), capacity - level);
    level += add;
    return add;
  }
  void debit(double joules) noexcept { level -= joules; }
};

enum class EnergyKind { compute, tx, rx, duty, harvest };

inline const char* to_string(EnergyKind k) {
  switch (k) {
    case EnergyKind::compute: return "compute";
    case EnergyKind::tx: return "tx";
    case EnergyKind::rx: return "rx";
    case EnergyKind::duty: return "duty";
    case EnergyKind::harvest: return "harvest";
  }
  return "?";
}

struct EnergyEntry {
  Tick tick = 0;
  NodeId node = 0;
  EnergyKind kind = EnergyKind::compute;
  double joules = 0.0;
};

// Double-entry record of every joule. Batteries are mutated by the
// operations themselves; the ledger keeps the independent itemised copy plus
// an end-of-tick balance snapshot per node for localisation.
struct EnergyLedger {
  std::vector<double> initial;
  std::vector<EnergyEntry> entries;
  std::vector<Tick> snapshot_ticks;
  std::vector<std::vector<double>> snapshots;  // per snapshot, level per node

  void record(Tick t, NodeId n, EnergyKind k, double j) {
    if (j != 0.0) entries.push_back({t, n, k, j});
  }
  void snapshot(Tick t, const std::vector<double>& levels) {
    snapshot_ticks.push_back(t);
    snapshots.push_back(levels);
  }

  struct Totals {
    double compute = 0.0, tx = 0.0, rx = 0.0, duty = 0.0, harvest = 0.0;
    double spent() const { return compute + tx + rx + duty; }
  };
  Totals totals(NodeId n) const {
    Totals t;
    for (const auto& e : entries) {
      if (e.node != n) continue;
      switch (e.kind) {
        case EnergyKind::compute: t.compute += e.joules; break;
        case EnergyKind::tx: t.tx += e.joules; break;
        case EnergyKind::rx: t.rx += e.joules; break;
        case EnergyKind::duty: t.duty += e.joules; break;
        case EnergyKind::harvest: t.harvest += e.joules; break;
      }
    }
    return t;
  }
};

struct AuditResult {
  bool ok = true;
  NodeId node = 0;
  Tick tick = -1;
  std::string message;
};

// initial - final == compute + tx + rx + duty - harvest for every node, to
// rel_tol relative to the node's initial energy (absolute floor 1e-12 J).
// Snapshots are replayed tick by tick so a failure names its first tick.
inline AuditResult energy_ledger_check(const EnergyLedger& ledger,
                                       std::span<const double> final_levels,
                                       double rel_tol = 1e-9) {
  const std::size_t n = ledger.initial.size();
  if (final_levels.size() != n) return {false, 0, -1, "final level count mismatch"};
  auto tol = [&](std::size_t i) { return std::max(1e-12, rel_tol * std::abs(ledger.initial[i])); };
  auto signed_amount = [](const EnergyEntry& e) {
    return e.kind == EnergyKind::harvest ? e.joules : -e.joules;
  };

  std::vector<double> running(ledger.initial);
  std::size_t cursor = 0;
  for (std::size_t s = 0; s < ledger.snapshot_ticks.size(); ++s) {
    const Tick t = ledger.snapshot_ticks[s];
    while (cursor < ledger.entries.size() && ledger.entries[cursor].tick <= t) {
      const auto& e = ledger.entries[cursor++];
      if (e.node < n) running[e.node] += signed_amount(e);
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(running[i] - ledger.snapshots[s][i]) > tol(i))
        return {false, static_cast<NodeId>(i), t,
                "node " + std::to_string(i) + " tick " + std::to_string(t) + ": ledger says " +
                    csv::format_double(running[i]) + " J, battery says " +
                    csv::format_double(ledger.snapshots[s][i]) + " J"};
    }
  }
  for (; cursor < ledger.entries.size(); ++cursor) {
    const auto& e = ledger.entries[cursor];
    if (e.node < n) running[e.node] += signed_amount(e);
  }
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = ledger.totals(static_cast<NodeId>(i));
    const double lhs = ledger.initial[i] - final_levels[i];
    const double rhs = t.spent() - t.harvest;
    if (std::abs(lhs - rhs) > tol(i) || std::abs(running[i] - final_levels[i]) > tol(i))
      return {false, static_cast<NodeId>(i),
              ledger.snapshot_ticks.empty() ? -1 : ledger.snapshot_ticks.back(),
              "node " + std::to_string(i) + ": initial - final = " + csv::format_double(lhs) +
                  " J but itemised spend - harvest = " + csv::format_double(rhs) + " J"};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Transmission

enum class TransmitStatus { delivered, dropped, truncated, not_attempted };

inline const char* to_string(TransmitStatus s) {
  switch (s) {
    case TransmitStatus::delivered: return "delivered";
    case TransmitStatus::dropped: return "dropped";
    case TransmitStatus::truncated: return "truncated";
    case TransmitStatus::not_attempted: return "not-attempted";
  }
  return "?";
}

struct TransmitOutcome {
  TransmitStatus status = TransmitStatus::not_attempted;
  std::uint64_t bytes_sent = 0;      // bytes the sender put on air
  std::uint64_t bytes_received = 0;  // bytes the receiver accepted
  double tx_joules = 0.0;
  double rx_joules = 0.0;
};

// One whole-packet attempt over `ev`. A packet larger than the contact window
// is truncated: the sender spends max_bytes worth of energy and nothing is
// delivered. Otherwise the packet is dropped with probability loss_prob;
// only delivered packets charge the receiver.
inline TransmitOutcome transmit(std::uint64_t packet_bytes, const ContactEvent& ev,
                                const RadioProfile& sender_radio,
                                const RadioProfile& receiver_radio, Battery& sender,
                                Battery& receiver, Rng& rng) {
  TransmitOutcome out;
  const std::uint64_t on_air = std::min(packet_bytes, ev.max_bytes);
  const double tx = sender_radio.tx_energy * static_cast<double>(on_air);
  if (!sender.can_afford(tx)) return out;
  sender.debit(tx);
  out.tx_joules = tx;
  out.bytes_sent = on_air;
  if (packet_bytes > ev.max_bytes) {
    out.status = TransmitStatus::truncated;
    return out;
  }
  if (rng.bernoulli(ev.loss_prob)) {
    out.status = TransmitStatus::dropped;
    return out;
  }
  const double rx = receiver_radio.rx_energy * static_cast<double>(packet_bytes);
  if (!receiver.can_afford(rx)) {
    out.status = TransmitStatus::dropped;
    return out;
  }
  receiver.debit(rx);
  out.rx_joules = rx;
  out.bytes_received = packet_bytes;
  out.status = TransmitStatus::delivered;
  return out;
}

}  // namespace nodelearn
