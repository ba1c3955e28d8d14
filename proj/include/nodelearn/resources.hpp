#pragma once

#include <algorithm>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nodelearn/coalition.hpp"
#include "nodelearn/errors.hpp"
#include "nodelearn/network.hpp"
#include "nodelearn/types.hpp"

namespace nodelearn {

enum class HardwareClass { mcu, npu, edge_server };

inline const char* to_string(HardwareClass h) {
  switch (h) {
    case HardwareClass::mcu: return "mcu";
    case HardwareClass::npu: return "npu";
    case HardwareClass::edge_server: return "edge-server";
  }
  return "?";
}

inline HardwareClass parse_hardware_class(const std::string& s) {
  if (s == "mcu") return HardwareClass::mcu;
  if (s == "npu") return HardwareClass::npu;
  if (s == "edge-server") return HardwareClass::edge_server;
  throw ConfigError("unknown hardware class '" + s + "'");
}

struct CapacityProfile {
  std::string name = "npu";
  std::uint64_t memory_bytes = 2'000'000;
  double compute_score = 1.0;  // local steps per tick; also the coordinator-election score
  double battery_joules = 100.0;
  double harvest_rate = 0.0;   // joules per tick
  HardwareClass hardware = HardwareClass::npu;

  void validate() const {
    if (!(compute_score >= 0.0) || !(battery_joules >= 0.0) || !(harvest_rate >= 0.0))
      throw ConfigError("capacity '" + name + "': fields must be nonnegative");
  }
};

inline std::optional<CapacityProfile> builtin_capacity(const std::string& name) {
  if (name == "mcu") return CapacityProfile{"mcu", 256'000, 1.0, 20.0, 0.0, HardwareClass::mcu};
  if (name == "npu") return CapacityProfile{"npu", 2'000'000, 2.0, 100.0, 0.0, HardwareClass::npu};
  if (name == "edge-server")
    return CapacityProfile{"edge-server", 64'000'000, 8.0, 10'000.0, 1.0, HardwareClass::edge_server};
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Memory pooling

struct MemoryStatus {
  std::uint64_t capacity = 0;
  std::uint64_t used = 0;
  std::uint64_t free() const noexcept { return capacity - std::min(used, capacity); }
};

// M_eff = m_i + sum over neighbours of their free bytes.
inline std::uint64_t effective_capacity(NodeId i, std::span<const NodeId> neighbours,
                                        std::span<const MemoryStatus> memory) {
  std::uint64_t total = memory[i].capacity;
  for (NodeId j : neighbours)
    if (j != i) total += memory[j].free();
  return total;
}

// Link-discounted variant: each neighbour's free bytes scaled by (1 - loss).
inline double effective_capacity_discounted(NodeId i, std::span<const NodeId> neighbours,
                                            std::span<const double> loss_probs,
                                            std::span<const MemoryStatus> memory) {
  double total = static_cast<double>(memory[i].capacity);
  for (std::size_t k = 0; k < neighbours.size(); ++k)
    if (neighbours[k] != i)
      total += static_cast<double>(memory[neighbours[k]].free()) * (1.0 - loss_probs[k]);
  return total;
}

inline std::uint64_t sample_bytes(const Sample& s) { return 8 * (s.x.size() + 1); }

// Replay entries hosted by `host` on behalf of `owner` until `expires_at`.
struct Lease {
  NodeId owner = 0;
  NodeId host = 0;
  std::vector<Sample> entries;
  std::uint64_t bytes = 0;
  Tick expires_at = 0;
};

struct OffloadStore {
  std::vector<Lease> leases;
  std::set<std::pair<NodeId, NodeId>> pending_stale;  // (owner, host)

  std::uint64_t hosted_bytes(NodeId host) const {
    std::uint64_t b = 0;
    for (const auto& l : leases)
      if (l.host == host) b += l.bytes;
    return b;
  }
  std::uint64_t offloaded_bytes(NodeId owner) const {
    std::uint64_t b = 0;
    for (const auto& l : leases)
      if (l.owner == owner) b += l.bytes;
    return b;
  }
};

struct OffloadOutcome {
  std::size_t accepted = 0;
  std::uint64_t bytes = 0;
};

// Store entries on `host` in order while they fit in `host_free_bytes`.
inline OffloadOutcome offload_replay(OffloadStore& store, NodeId owner, NodeId host,
                                     std::span<const Sample> entries, Tick t, Tick lease_ttl,
                                     std::uint64_t host_free_bytes, bool in_contact) {
  OffloadOutcome out;
  if (!in_contact || owner == host) return out;
  Lease lease{owner, host, {}, 0, t + lease_ttl};
  for (const Sample& s : entries) {
    const std::uint64_t b = sample_bytes(s);
    if (out.bytes + b > host_free_bytes) break;
    lease.entries.push_back(s);
    out.bytes += b;
    ++out.accepted;
  }
  lease.bytes = out.bytes;
  if (out.accepted > 0) store.leases.push_back(std::move(lease));
  return out;
}

// Drop leases that have expired at t or whose owner and host lost contact;
// the owner is told at its next contact with that host.
template <class InContact>
std::size_t expire_leases(OffloadStore& store, Tick t, InContact&& in_contact) {
  std::size_t dropped = 0;
  std::erase_if(store.leases, [&](const Lease& l) {
    const bool gone = t > l.expires_at || !in_contact(l.owner, l.host);
    if (gone) {
      store.pending_stale.insert({l.owner, l.host});
      ++dropped;
    }
    return gone;
  });
  return dropped;
}

struct RetrieveResult {
  std::vector<Sample> entries;
  bool stale = false;  // a previous lease on this host was lost
};

inline RetrieveResult retrieve_replay(OffloadStore& store, NodeId owner, NodeId host, Tick t,
                                      bool in_contact) {
  RetrieveResult out;
  if (!in_contact) return out;
  expire_leases(store, t, [&](NodeId o, NodeId h) { return !(o == owner && h == host) || in_contact; });
  if (store.pending_stale.erase({owner, host})) out.stale = true;
  for (const auto& l : store.leases)
    if (l.owner == owner && l.host == host)
      out.entries.insert(out.entries.end(), l.entries.begin(), l.entries.end());
  return out;
}

// ---------------------------------------------------------------------------
// Relays

struct RelayOutcome {
  bool delivered = false;
  bool attempted = false;
  TransmitOutcome first;   // source -> relay
  TransmitOutcome second;  // relay -> destination
};

// Two-hop delivery source -> relay -> destination within one tick. The relay
// must be able to pay for receiving and re-sending the packet up front.
inline RelayOutcome relay_forward(std::uint64_t packet_bytes, const ContactEvent& first_hop,
                                  const ContactEvent& second_hop, const RadioProfile& src_radio,
                                  const RadioProfile& relay_radio, const RadioProfile& dst_radio,
                                  Battery& src, Battery& relay, Battery& dst, Rng& rng) {
  RelayOutcome out;
  if (first_hop.to != second_hop.from) throw UsageError("relay hops do not share the relay node");
  const double relay_cost =
      relay_radio.rx_energy * static_cast<double>(packet_bytes) +
      relay_radio.tx_energy * static_cast<double>(std::min(packet_bytes, second_hop.max_bytes));
  if (!relay.can_afford(relay_cost)) return out;
  out.attempted = true;
  out.first = transmit(packet_bytes, first_hop, src_radio, relay_radio, src, relay, rng);
  if (out.first.status != TransmitStatus::delivered) return out;
  out.second = transmit(packet_bytes, second_hop, relay_radio, dst_radio, relay, dst, rng);
  out.delivered = out.second.status == TransmitStatus::delivered;
  return out;
}

// ---------------------------------------------------------------------------
// Role rotation

struct DutyAssignment {
  std::optional<NodeId> coordinator;
  std::vector<NodeId> sleeping;
  bool idle = false;
};

// Members below `sleep_threshold` energy sleep; the awake member with the
// most energy coordinates (ties to lowest id). All asleep -> idle cluster.
inline DutyAssignment rotate_roles(const Cluster& cluster, std::span<const double> energy_fraction,
                                   double sleep_threshold = 0.1) {
  DutyAssignment out;
  for (NodeId m : cluster.members) {
    if (energy_fraction[m] < sleep_threshold) {
      out.sleeping.push_back(m);
      continue;
    }
    if (!out.coordinator || energy_fraction[m] > energy_fraction[*out.coordinator])
      out.coordinator = m;
  }
  out.idle = !out.coordinator.has_value();
  return out;
}

}  // namespace nodelearn
