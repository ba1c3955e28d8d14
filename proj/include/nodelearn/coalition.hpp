#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <vector>

#include "nodelearn/network.hpp"
#include "nodelearn/types.hpp"

namespace nodelearn {

// Ephemeral group of nodes connected through mutual contacts at formation.
struct Cluster {
  std::uint64_t id = 0;
  std::vector<NodeId> members;  // ascending
  NodeId coordinator = 0;
  Tick formed_at = 0;
  Tick ttl = 0;

  bool contains(NodeId n) const {
    return std::binary_search(members.begin(), members.end(), n);
  }
  friend bool operator==(const Cluster&, const Cluster&) = default;
};

namespace detail {

struct DisjointSets {
  std::vector<std::size_t> parent;
  explicit DisjointSets(std::size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (a < b) parent[b] = a;
    else parent[a] = b;
  }
};

// Undirected edges {i, j} where both i->j and j->i are present.
inline std::set<std::pair<NodeId, NodeId>> mutual_edges(std::span<const ContactEvent> contacts) {
  std::set<std::pair<NodeId, NodeId>> directed, out;
  for (const auto& c : contacts) directed.insert({c.from, c.to});
  for (const auto& [a, b] : directed)
    if (a < b && directed.count({b, a})) out.insert({a, b});
  return out;
}

}  // namespace detail

// Connected components of the mutual-contact graph over `eligible` nodes
// (all nodes when empty). Coordinator: highest capacity score, then lowest id.
// Ids are assigned sequentially from `next_id`.
inline std::vector<Cluster> form_clusters(std::span<const ContactEvent> contacts,
                                          std::span<const double> capacities, Tick t, Tick ttl,
                                          std::uint64_t& next_id,
                                          const std::vector<bool>& eligible = {}) {
  const std::size_t n = capacities.size();
  auto is_eligible = [&](NodeId i) { return eligible.empty() || eligible[i]; };
  detail::DisjointSets ds(n);
  for (const auto& [a, b] : detail::mutual_edges(contacts))
    if (a < n && b < n && is_eligible(a) && is_eligible(b)) ds.unite(a, b);
  std::map<std::size_t, std::vector<NodeId>> groups;
  for (NodeId i = 0; i < n; ++i)
    if (is_eligible(i)) groups[ds.find(i)].push_back(i);
  std::vector<Cluster> out;
  for (auto& [root, members] : groups) {
    Cluster c;
    c.id = next_id++;
    c.members = members;
    c.formed_at = t;
    c.ttl = ttl;
    c.coordinator = members.front();
    for (NodeId m : members)
      if (capacities[m] > capacities[c.coordinator]) c.coordinator = m;
    out.push_back(std::move(c));
  }
  return out;
}

// True when the members are still connected through current mutual contacts.
inline bool cluster_intact(const Cluster& c, std::span<const ContactEvent> contacts) {
  if (c.members.size() <= 1) return true;
  std::map<NodeId, std::size_t> index;
  for (std::size_t k = 0; k < c.members.size(); ++k) index[c.members[k]] = k;
  detail::DisjointSets ds(c.members.size());
  for (const auto& [a, b] : detail::mutual_edges(contacts))
    if (index.count(a) && index.count(b)) ds.unite(index[a], index[b]);
  const std::size_t root = ds.find(0);
  for (std::size_t k = 1; k < c.members.size(); ++k)
    if (ds.find(k) != root) return false;
  return true;
}

// Drops clusters older than their ttl (t - formed_at > ttl) or whose members
// are no longer connected.
inline std::vector<Cluster> dissolve_expired(std::vector<Cluster> clusters, Tick t,
                                             std::span<const ContactEvent> contacts) {
  std::erase_if(clusters, [&](const Cluster& c) {
    return t - c.formed_at > c.ttl || !cluster_intact(c, contacts);
  });
  return clusters;
}

// ---------------------------------------------------------------------------
// Trust

// Node-private trust rows; each row only holds peers that node has scored.
struct TrustGraph {
  std::vector<std::map<NodeId, double>> rows;
  double decay = 0.9;
  double default_score = 0.5;

  TrustGraph() = default;
  TrustGraph(std::size_t n, double decay_, double default_)
      : rows(n), decay(decay_), default_score(default_) {}

  double trust(NodeId i, NodeId j) const {
    if (i >= rows.size()) return default_score;
    auto it = rows[i].find(j);
    return it == rows[i].end() ? default_score : it->second;
  }
};

// Logistic squash of an accuracy delta: delta >= 0 maps into [0.5, 1),
// delta < 0 into (0, 0.5). `scale` is in accuracy units (0.02 = 2 points).
inline double observed_utility(double accuracy_delta, double scale = 0.02) {
  return 1.0 / (1.0 + std::exp(-accuracy_delta / scale));
}

// trust(i, j) <- decay * trust + (1 - decay) * utility, utility clamped to [0, 1].
inline TrustGraph update_trust(TrustGraph g, NodeId i, NodeId j, double utility) {
  if (i >= g.rows.size()) g.rows.resize(i + 1);
  const double u = std::clamp(utility, 0.0, 1.0);
  const double t = g.trust(i, j);
  g.rows[i][j] = std::clamp(g.decay * t + (1.0 - g.decay) * u, 0.0, 1.0);
  return g;
}

// In-place variant used by the engine's hot path.
inline void update_trust_inplace(TrustGraph& g, NodeId i, NodeId j, double utility) {
  if (i >= g.rows.size()) g.rows.resize(i + 1);
  const double u = std::clamp(utility, 0.0, 1.0);
  const double t = g.trust(i, j);
  g.rows[i][j] = std::clamp(g.decay * t + (1.0 - g.decay) * u, 0.0, 1.0);
}

struct PeerCandidate {
  NodeId peer = 0;
  double loss_prob = 0.0;
  std::uint64_t packet_bytes = 0;
};

// Rank candidates by trust(self, peer) * (1 - loss) (ties to lower id) and
// admit them while the cumulative packet bytes stay within budget. Peers
// with a zero score are never selected.
inline std::vector<NodeId> select_peers(NodeId self, std::span<const PeerCandidate> candidates,
                                        const TrustGraph& g, std::uint64_t budget_bytes) {
  struct Scored {
    double score;
    PeerCandidate c;
  };
  std::vector<Scored> ranked;
  for (const auto& c : candidates) {
    if (c.peer == self) continue;
    const double s = g.trust(self, c.peer) * (1.0 - c.loss_prob);
    if (s > 0.0) ranked.push_back({s, c});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.c.peer < b.c.peer;
  });
  std::vector<NodeId> out;
  std::uint64_t used = 0;
  for (const auto& r : ranked) {
    if (used + r.c.packet_bytes > budget_bytes) break;
    used += r.c.packet_bytes;
    out.push_back(r.c.peer);
  }
  return out;
}

}  // namespace nodelearn
