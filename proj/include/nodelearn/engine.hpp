#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "nodelearn/coalition.hpp"
#include "nodelearn/config.hpp"
#include "nodelearn/context.hpp"
#include "nodelearn/datagen.hpp"
#include "nodelearn/exchange.hpp"
#include "nodelearn/model.hpp"
#include "nodelearn/network.hpp"
#include "nodelearn/node.hpp"
#include "nodelearn/resources.hpp"

namespace nodelearn {

constexpr std::int64_t kPopulation = -1;

// One row of metrics.csv. Cumulative fields never decrease.
struct MetricRecord {
  Tick tick = 0;
  std::int64_t node = kPopulation;
  double accuracy = 0.0;
  double energy_j = 0.0;          // compute + tx + rx + duty, cumulative
  double compute_energy_j = 0.0;  // local steps only, cumulative
  std::uint64_t bytes_tx = 0;
  std::uint64_t bytes_rx = 0;
  std::uint64_t updates = 0;
  std::uint64_t skipped = 0;
  std::string events;             // ';'-joined tags since the previous row

  friend bool operator==(const MetricRecord&, const MetricRecord&) = default;
};

struct NodeCounters {
  double energy = 0.0;
  double compute = 0.0;
  std::uint64_t bytes_tx = 0;
  std::uint64_t bytes_rx = 0;
  std::vector<std::string> tags;  // pending for the next metric row
};

struct TrustSample {
  Tick tick;
  NodeId i;
  NodeId j;
  double trust;
};

struct SimState {
  Tick tick = 0;
  std::vector<NodeState> nodes;
  std::vector<NodeCounters> counters;
  MobilityState mobility;
  std::vector<Cluster> clusters;
  std::uint64_t next_cluster_id = 0;
  TrustGraph trust;
  DataStreamSpec data;
  std::uint64_t data_epoch = 0;
  std::vector<Sample> test_set;  // class balanced, regenerated after each drift
  ProbeSet probe;
  OffloadStore offload;
  EnergyLedger ledger;
  std::vector<MetricRecord> records;
  std::vector<json> events;
  std::vector<json> packets;
  std::vector<TrustSample> trust_log;
  std::vector<std::optional<double>> contact_success;  // observed last tick
  std::vector<Tick> drift_onsets;                      // first tick under each drift
  std::vector<std::string> population_tags;
  bool halted = false;
  bool server_alive = true;
};

namespace detail {

inline void log_event(SimState& s, const std::string& kind, std::int64_t node, json detail = {}) {
  json e{{"tick", s.tick}, {"kind", kind}};
  if (node >= 0) e["node"] = node;
  if (!detail.is_null())
    for (auto it = detail.begin(); it != detail.end(); ++it) e[it.key()] = it.value();
  s.events.push_back(std::move(e));
}

inline void tag(SimState& s, NodeId i, const std::string& t) {
  auto& tags = s.counters[i].tags;
  if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
}

inline void tag_population(SimState& s, const std::string& t) {
  auto& tags = s.population_tags;
  if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
}

inline void spend(SimState& s, NodeId i, EnergyKind kind, double joules) {
  if (joules == 0.0) return;
  s.ledger.record(s.tick, i, kind, joules);
  if (kind == EnergyKind::harvest) return;
  s.counters[i].energy += joules;
  if (kind == EnergyKind::compute) s.counters[i].compute += joules;
}

inline void sync_energy(NodeState& n) { n.context.energy_fraction = n.battery.fraction(); }

inline void regenerate_eval_sets(SimState& s, const ScenarioConfig& cfg) {
  Rng test_rng(cfg.seed, Stream::test, s.data_epoch);
  s.test_set = sample_uniform(s.data, cfg.data.test_size, test_rng);
  Rng probe_rng(cfg.seed, Stream::probe, s.data_epoch);
  s.probe = make_probe_set(sample_uniform(s.data, std::max<std::size_t>(1, cfg.data.probe_size), probe_rng));
  for (auto& n : s.nodes) {
    Rng rng(cfg.seed, Stream::validation, n.id, s.data_epoch);
    const std::vector<bool>* mask = n.id < s.data.masks.size() ? &s.data.masks[n.id] : nullptr;
    n.validation = cfg.data.validation_size == 0
                       ? std::vector<Sample>{}
                       : sample_with_prior(s.data, s.data.priors[n.id], cfg.data.validation_size, rng, mask);
  }
}

inline std::vector<RadioProfile> radios_of(const ScenarioConfig& cfg) {
  std::vector<RadioProfile> r;
  for (const auto& n : cfg.nodes) r.push_back(n.radio);
  return r;
}

// Garbage payload: a fixed N(0, scale^2) vector per adversary, identical
// every tick (an all-equal constant would be invisible to softmax).
inline std::vector<double> garbage_payload(const ScenarioConfig& cfg, NodeId i, std::size_t n) {
  Rng rng(cfg.seed, Stream::adversary, i, n);
  std::vector<double> v(n);
  for (double& x : v) x = cfg.nodes[i].adversary_scale * rng.normal();
  return v;
}

}  // namespace detail

// Data stream spec from the scenario: Gaussian prototypes (or a CSV pool),
// per-node priors, drift schedule and modality masks.
inline DataStreamSpec build_data_spec(const ScenarioConfig& cfg) {
  DataStreamSpec spec;
  spec.seed = cfg.seed;
  spec.sigma = cfg.data.sigma;
  if (!cfg.data.csv_path.empty()) {
    CsvSchema schema{cfg.data.label_column, cfg.data.csv_features};
    Dataset ds = load_csv_dataset(cfg.data.csv_path, schema);
    spec.classes = ds.classes;
    spec.features = ds.features;
    spec.pool = pool_by_class(ds);
  } else {
    spec.classes = cfg.data.classes;
    spec.features = cfg.data.features;
    spec.prototypes = orthogonal_prototypes(spec.classes, spec.features,
                                            cfg.data.separation * cfg.data.sigma);
  }
  const std::size_t n = cfg.node_count();
  if (cfg.data.partition == "dirichlet") {
    spec.priors = dirichlet_partition(cfg.data.alpha, n, spec.classes, cfg.seed);
  } else if (cfg.data.partition == "explicit") {
    spec.priors = cfg.data.priors;
  } else {
    spec.priors.assign(n, std::vector<double>(spec.classes, 1.0 / static_cast<double>(spec.classes)));
  }
  spec.schedule = cfg.data.drift;
  spec.masks = cfg.data.masks;
  spec.validate();
  return spec;
}

inline MobilityState build_mobility(const ScenarioConfig& cfg) {
  const std::size_t n = cfg.node_count();
  const auto& m = cfg.mobility;
  if (m.model == "random-waypoint")
    return make_random_waypoint(n, m.width, m.height, m.min_speed, m.max_speed, cfg.seed);
  if (m.model == "trace") return make_trace(n, load_contact_trace(m.trace_path));
  if (m.layout == "ring") return make_static(ring_layout(n, m.spacing));
  if (m.layout == "positions") return make_static(m.positions);
  return make_static(grid_layout(n, m.spacing));
}

inline SimState initial_state(const ScenarioConfig& cfg) {
  SimState s;
  const std::size_t n = cfg.node_count();
  s.data = build_data_spec(cfg);
  s.mobility = build_mobility(cfg);
  s.trust = TrustGraph(n, cfg.trust.decay, cfg.trust.initial);
  s.counters.resize(n);
  s.contact_success.assign(n, std::nullopt);
  Rng common(cfg.seed, Stream::init);
  const ModelParams shared = init_params(common, cfg.training, s.data.features, s.data.classes);
  for (NodeId i = 0; i < n; ++i) {
    NodeState node;
    node.id = i;
    if (cfg.common_init) {
      node.params = shared;
    } else {
      Rng rng(cfg.seed, Stream::init, i + 1);
      node.params = init_params(rng, cfg.training, s.data.features, s.data.classes);
    }
    node.capacity = cfg.nodes[i].capacity;
    node.radio = cfg.nodes[i].radio.name;
    node.battery = {node.capacity.battery_joules, node.capacity.battery_joules};
    node.replay = ReplayBuffer(cfg.nodes[i].replay_capacity);
    node.adversary = cfg.nodes[i].adversary;
    node.adversary_scale = cfg.nodes[i].adversary_scale;
    detail::sync_energy(node);
    s.nodes.push_back(std::move(node));
    s.ledger.initial.push_back(s.nodes.back().battery.level);
  }
  detail::regenerate_eval_sets(s, cfg);
  return s;
}

// ---------------------------------------------------------------------------
// Phases

namespace detail {

inline void apply_dropout(SimState& s, const ScenarioConfig& cfg) {
  for (std::size_t k = 0; k < cfg.dropout.size(); ++k) {
    const auto& ev = cfg.dropout[k];
    if (ev.tick != s.tick) continue;
    std::vector<NodeId> victims = ev.nodes;
    if (ev.fraction > 0.0) {
      const auto target = static_cast<std::size_t>(
          std::llround(ev.fraction * static_cast<double>(s.nodes.size())));
      for (NodeId i : ev.include)
        if (victims.size() < target && std::find(victims.begin(), victims.end(), i) == victims.end())
          victims.push_back(i);
      std::vector<NodeId> pool;
      for (const auto& n : s.nodes)
        if (n.alive && std::find(victims.begin(), victims.end(), n.id) == victims.end())
          pool.push_back(n.id);
      Rng rng(cfg.seed, Stream::user, static_cast<std::uint64_t>(s.tick), k);
      while (victims.size() < target && !pool.empty()) {
        const auto pick = rng.below(pool.size());
        victims.push_back(pool[pick]);
        pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
      }
    }
    std::sort(victims.begin(), victims.end());
    for (NodeId i : victims) {
      if (!s.nodes[i].alive) continue;
      s.nodes[i].alive = false;
      log_event(s, "dropout", i);
      tag_population(s, "dropout");
    }
  }
}

inline std::vector<ContactEvent> contacts_for(const SimState& s, const ScenarioConfig& cfg) {
  std::vector<bool> active(s.nodes.size());
  for (const auto& n : s.nodes) active[n.id] = n.alive;
  const auto radios = radios_of(cfg);
  return compute_contacts(s.mobility, radios, s.tick, cfg.tick_seconds, &active);
}

inline void coalition_phase(SimState& s, const ScenarioConfig& cfg,
                            const std::vector<ContactEvent>& contacts) {
  const std::size_t before = s.clusters.size();
  std::vector<std::uint64_t> old_ids;
  for (const auto& c : s.clusters) old_ids.push_back(c.id);
  s.clusters = dissolve_expired(std::move(s.clusters), s.tick, contacts);
  std::erase_if(s.clusters, [&](const Cluster& c) {
    return std::any_of(c.members.begin(), c.members.end(),
                       [&](NodeId m) { return !s.nodes[m].alive; });
  });
  if (s.clusters.size() != before)
    for (std::uint64_t id : old_ids)
      if (std::none_of(s.clusters.begin(), s.clusters.end(),
                       [&](const Cluster& c) { return c.id == id; }))
        log_event(s, "cluster-dissolved", -1, {{"cluster", id}});

  std::vector<bool> eligible(s.nodes.size());
  for (const auto& n : s.nodes) eligible[n.id] = n.alive;
  for (const auto& c : s.clusters)
    for (NodeId m : c.members) eligible[m] = false;
  std::vector<double> caps;
  for (const auto& n : s.nodes) caps.push_back(n.capacity.compute_score);
  for (auto& c : form_clusters(contacts, caps, s.tick, cfg.coalition.ttl, s.next_cluster_id, eligible)) {
    if (c.members.size() > 1)
      log_event(s, "cluster-formed", -1,
                {{"cluster", c.id}, {"members", c.members}, {"coordinator", c.coordinator}});
    s.clusters.push_back(std::move(c));
  }
  std::sort(s.clusters.begin(), s.clusters.end(),
            [](const Cluster& a, const Cluster& b) { return a.members.front() < b.members.front(); });

  for (auto& n : s.nodes) n.asleep = false;
  if (!cfg.energy.role_rotation) {
    for (const auto& c : s.clusters) {
      if (c.members.size() < 2) continue;
      const double cost = cfg.energy.coordinator_joules;
      auto& b = s.nodes[c.coordinator].battery;
      if (b.can_afford(cost)) {
        b.debit(cost);
        spend(s, c.coordinator, EnergyKind::duty, cost);
      }
    }
    return;
  }
  std::vector<double> frac;
  for (const auto& n : s.nodes) frac.push_back(n.battery.fraction());
  for (auto& c : s.clusters) {
    const DutyAssignment duty = rotate_roles(c, frac, cfg.energy.sleep_threshold);
    for (NodeId m : duty.sleeping) {
      s.nodes[m].asleep = true;
      tag(s, m, "sleep");
    }
    if (duty.idle) {
      if (c.members.size() > 1) log_event(s, "cluster-idle", -1, {{"cluster", c.id}});
      continue;
    }
    c.coordinator = *duty.coordinator;
    if (c.members.size() < 2) continue;
    const double cost = cfg.energy.coordinator_joules;
    auto& b = s.nodes[c.coordinator].battery;
    if (b.can_afford(cost)) {
      b.debit(cost);
      spend(s, c.coordinator, EnergyKind::duty, cost);
      tag(s, c.coordinator, "coordinator");
    }
  }
}

inline void offload_phase(SimState& s, const ScenarioConfig& cfg,
                          const std::vector<ContactEvent>& contacts) {
  std::set<std::pair<NodeId, NodeId>> linked;
  for (const auto& c : contacts) linked.insert({c.from, c.to});
  auto in_contact = [&](NodeId a, NodeId b) { return linked.count({a, b}) && linked.count({b, a}); };
  const auto dropped = expire_leases(s.offload, s.tick, in_contact);
  if (dropped) log_event(s, "lease-expired", -1, {{"count", dropped}});
  for (const auto& c : s.clusters) {
    if (c.members.size() < 2) continue;
    const NodeId host = c.coordinator;
    for (NodeId owner : c.members) {
      if (owner == host || !in_contact(owner, host)) continue;
      auto& node = s.nodes[owner];
      auto stale = retrieve_replay(s.offload, owner, host, s.tick, true);
      if (stale.stale) log_event(s, "stale-data", owner, {{"host", host}});
      const std::uint64_t resident = node.resident_bytes() + s.offload.hosted_bytes(owner);
      if (resident <= node.capacity.memory_bytes) continue;
      // Oldest real entries beyond the memory budget move to the coordinator.
      std::vector<Sample> spill;
      std::uint64_t excess = resident - node.capacity.memory_bytes;
      for (const auto& e : node.replay.entries()) {
        if (excess == 0) break;
        if (e.synthetic) continue;
        spill.push_back(e.sample);
        excess -= std::min(excess, sample_bytes(e.sample));
      }
      const auto& hn = s.nodes[host];
      const std::uint64_t used = hn.resident_bytes() + s.offload.hosted_bytes(host);
      const std::uint64_t free = hn.capacity.memory_bytes - std::min(used, hn.capacity.memory_bytes);
      const auto out = offload_replay(s.offload, owner, host, spill, s.tick, cfg.coalition.ttl, free, true);
      if (out.accepted) {
        std::deque<ReplayEntry> keep;
        std::size_t moved = 0;
        for (const auto& e : node.replay.entries()) {
          if (!e.synthetic && moved < out.accepted) {
            ++moved;
            continue;
          }
          keep.push_back(e);
        }
        node.replay.restore(node.replay.capacity(), std::move(keep));
        log_event(s, "offload", owner, {{"host", host}, {"entries", out.accepted}, {"bytes", out.bytes}});
      }
    }
  }
}

inline void local_phase(SimState& s, const ScenarioConfig& cfg) {
  const StepPolicy policy{cfg.energy.step_joules, cfg.energy.context_gate};
  for (auto& node : s.nodes) {
    if (!node.alive) continue;
    const NodeId i = node.id;
    const double added = node.battery.harvest(node.capacity.harvest_rate);
    spend(s, i, EnergyKind::harvest, added);
    const std::size_t steps = cfg.steps_for(i);
    for (std::size_t e = 0; e < steps; ++e) {
      Rng rng(cfg.seed, Stream::data, i, static_cast<std::uint64_t>(s.tick), e);
      std::vector<Sample> batch = sample_batch(s.data, i, s.tick, cfg.training.batch_size, rng);
      if (e == 0)
        for (std::size_t k = 0; k < std::min(cfg.replay.insert_per_tick, batch.size()); ++k)
          node.replay.push(batch[k], false);
      if (cfg.replay.per_step > 0 && !node.replay.empty()) {
        Rng rr(cfg.seed, Stream::replay, i, static_cast<std::uint64_t>(s.tick), e);
        for (std::size_t k = 0; k < cfg.replay.per_step; ++k)
          batch.push_back(node.replay.entries()[rr.below(node.replay.size())].sample);
      }
      if (e == 0) {
        ContextObservation obs;
        obs.energy_delta = node.battery.fraction() - node.context.energy_fraction;
        obs.contact_success = s.contact_success[i];
        obs.loss = loss(node.params, batch, cfg.training.l2_penalty);
        node.context = update_context(node.context, obs, cfg.context);
      } else {
        sync_energy(node);
      }
      const StepOutcome out = local_step(node, batch, cfg.training, policy);
      spend(s, i, EnergyKind::compute, out.energy);
      if (!out.stepped) {
        tag(s, i, std::string("skip:") + to_string(out.reason));
        log_event(s, "skip", i, {{"reason", to_string(out.reason)}});
      }
    }
    sync_energy(node);
  }
}

struct Delivery {
  KnowledgePacket packet;
  bool relayed = false;
};

// Pairwise-candidate utility: validation accuracy of an even merge with one
// peer, relative to the node's current accuracy, squashed to [0, 1].
inline double candidate_utility(const NodeState& node, const KnowledgePacket& pk,
                                const MergePolicy& policy, const ProbeSet& probe,
                                const TrainingConfig& training, double base_acc, double scale) {
  if (node.validation.empty()) return 0.5;
  NodeState cand = node;
  const KnowledgePacket one[] = {pk};
  const WeightVector even{{0.5, 0.5}, false};
  if (policy.kind == MergeKind::prototype) {
    std::vector<Sample> protos;
    const std::size_t d = node.params.shape.features, k = node.params.shape.classes;
    if (pk.payload.size() != k * (d + 1)) return 0.0;
    for (std::size_t c = 0; c < k; ++c)
      if (pk.payload[c * (d + 1)] > 0.0)
        protos.push_back({std::vector<double>(pk.payload.begin() + static_cast<std::ptrdiff_t>(c * (d + 1) + 1),
                                              pk.payload.begin() + static_cast<std::ptrdiff_t>((c + 1) * (d + 1))),
                          c});
    if (protos.empty()) return 0.5;
    apply_gradient(cand.params, grad(cand.params, protos, training.l2_penalty), training.learning_rate);
  } else {
    const auto out = merge(cand, one, even, policy, probe);
    if (!out.merged) return 0.0;
  }
  const double acc = evaluate_accuracy(cand.params, node.validation);
  if (!std::isfinite(acc)) return 0.0;
  return observed_utility(acc - base_acc, scale);
}

inline json packet_record(const SimState& s, const KnowledgePacket& pk, NodeId to,
                          TransmitStatus status, bool relayed, bool payload) {
  json j{{"tick", s.tick}, {"kind", to_string(pk.kind)}, {"source", pk.source}, {"to", to},
         {"version", pk.source_version}, {"byte_size", pk.byte_size},
         {"status", to_string(status)}, {"relayed", relayed}};
  if (payload) j["payload"] = pk.payload;
  return j;
}

inline void account_transfer(SimState& s, NodeId from, NodeId to, const TransmitOutcome& o) {
  spend(s, from, EnergyKind::tx, o.tx_joules);
  spend(s, to, EnergyKind::rx, o.rx_joules);
  s.counters[from].bytes_tx += o.bytes_sent;
  s.counters[to].bytes_rx += o.bytes_received;
}

inline bool graph_connected(std::size_t n, const std::vector<ContactEvent>& contacts,
                            const std::vector<NodeState>& nodes) {
  DisjointSets ds(n);
  for (const auto& c : contacts) ds.unite(c.from, c.to);
  std::optional<std::size_t> root;
  for (const auto& node : nodes) {
    if (!node.alive) continue;
    const auto r = ds.find(node.id);
    if (root && *root != r) return false;
    root = r;
  }
  return true;
}

// Phases 5-7 for the node-learning and gossip regimes.
inline void exchange_phase(SimState& s, const ScenarioConfig& cfg,
                           const std::vector<ContactEvent>& contacts) {
  const bool gossip = cfg.regime == Regime::gossip;
  MergePolicy policy = cfg.exchange.policy;
  if (gossip) {
    policy.kind = MergeKind::average;
    policy.weights = WeightRule::metropolis;
  }
  const std::size_t n = s.nodes.size();
  auto active = [&](NodeId i) { return s.nodes[i].alive && !s.nodes[i].asleep; };
  const auto radios = radios_of(cfg);

  std::map<std::pair<NodeId, NodeId>, const ContactEvent*> link;
  std::vector<std::uint32_t> in_degree(n, 0), out_degree(n, 0);
  for (const auto& c : contacts) {
    if (!active(c.from) || !active(c.to)) continue;
    link[{c.from, c.to}] = &c;
    ++out_degree[c.from];
    ++in_degree[c.to];
  }

  // Encode once per sender from its post-step state.
  std::vector<std::optional<KnowledgePacket>> outbox(n);
  for (NodeId j = 0; j < n; ++j) {
    if (!active(j) || out_degree[j] == 0) continue;
    try {
      KnowledgePacket pk = encode_packet(s.nodes[j], policy.packet_kind(), s.probe, out_degree[j]);
      if (s.nodes[j].adversary == AdversaryKind::constant_garbage && s.tick >= cfg.nodes[j].adversary_start)
        pk.payload = garbage_payload(cfg, j, pk.payload.size());
      outbox[j] = std::move(pk);
    } catch (const std::exception& e) {
      log_event(s, "encode-failed", j, {{"reason", e.what()}});
    }
  }
  if (cfg.exchange.cluster_summaries && policy.kind == MergeKind::distill) {
    for (const auto& c : s.clusters) {
      if (c.members.size() < 2 || !outbox[c.coordinator]) continue;
      std::vector<const NodeState*> members;
      for (NodeId m : c.members)
        if (active(m) && s.nodes[m].adversary == AdversaryKind::none) members.push_back(&s.nodes[m]);
      if (members.empty()) continue;
      KnowledgePacket summary = cluster_summary(members, s.probe, c.coordinator);
      summary.source = c.coordinator;
      summary.context = outbox[c.coordinator]->context;
      if (s.nodes[c.coordinator].adversary == AdversaryKind::none) outbox[c.coordinator] = summary;
    }
  }

  std::vector<const Cluster*> cluster_of(n, nullptr);
  for (const auto& c : s.clusters)
    for (NodeId m : c.members) cluster_of[m] = &c;

  std::vector<std::vector<Delivery>> inbox(n);
  std::vector<std::uint32_t> attempts(n, 0), successes(n, 0);
  for (NodeId i = 0; i < n; ++i) {
    if (!active(i)) continue;
    std::vector<PeerCandidate> candidates;
    std::map<NodeId, NodeId> via;  // relayed candidates: source -> relay
    for (NodeId j = 0; j < n; ++j) {
      if (j == i || !outbox[j]) continue;
      auto it = link.find({j, i});
      if (it != link.end()) {
        candidates.push_back({j, it->second->loss_prob, outbox[j]->byte_size});
        continue;
      }
      if (gossip || !cfg.exchange.relay || !cluster_of[i] || cluster_of[i] != cluster_of[j]) continue;
      const NodeId r = cluster_of[i]->coordinator;
      if (r == i || r == j || !active(r)) continue;
      auto a = link.find({j, r}), b = link.find({r, i});
      if (a == link.end() || b == link.end()) continue;
      const double p = 1.0 - (1.0 - a->second->loss_prob) * (1.0 - b->second->loss_prob);
      candidates.push_back({j, p, outbox[j]->byte_size});
      via[j] = r;
    }
    std::vector<NodeId> chosen;
    if (gossip) {
      for (const auto& c : candidates) chosen.push_back(c.peer);
    } else {
      chosen = select_peers(i, candidates, s.trust, cfg.exchange.budget_bytes);
    }
    for (NodeId j : chosen) {
      const KnowledgePacket& pk = *outbox[j];
      auto rel = via.find(j);
      if (rel == via.end()) {
        Rng rng(cfg.seed, Stream::link, j, i, static_cast<std::uint64_t>(s.tick));
        const auto o = transmit(pk.byte_size, *link.at({j, i}), radios[j], radios[i],
                                s.nodes[j].battery, s.nodes[i].battery, rng);
        account_transfer(s, j, i, o);
        if (o.status != TransmitStatus::not_attempted) {
          ++attempts[i];
          ++attempts[j];
        }
        if (o.status == TransmitStatus::delivered) {
          ++successes[i];
          ++successes[j];
          inbox[i].push_back({pk, false});
        } else if (o.status != TransmitStatus::not_attempted) {
          log_event(s, "packet-lost", i, {{"source", j}, {"status", to_string(o.status)}});
        }
        if (cfg.output.packets)
          s.packets.push_back(packet_record(s, pk, i, o.status, false, cfg.output.packet_payloads));
      } else {
        const NodeId r = rel->second;
        Rng rng(cfg.seed, Stream::relay, j, i, static_cast<std::uint64_t>(s.tick));
        const auto o = relay_forward(pk.byte_size, *link.at({j, r}), *link.at({r, i}), radios[j],
                                     radios[r], radios[i], s.nodes[j].battery, s.nodes[r].battery,
                                     s.nodes[i].battery, rng);
        account_transfer(s, j, r, o.first);
        account_transfer(s, r, i, o.second);
        if (o.attempted) {
          ++attempts[i];
          ++attempts[j];
        }
        if (o.delivered) {
          ++successes[i];
          ++successes[j];
          inbox[i].push_back({pk, true});
          tag(s, r, "relay");
        } else if (o.attempted) {
          log_event(s, "packet-lost", i, {{"source", j}, {"relay", r}});
        }
        if (cfg.output.packets)
          s.packets.push_back(packet_record(
              s, pk, i, o.delivered ? TransmitStatus::delivered : TransmitStatus::dropped, true,
              cfg.output.packet_payloads));
      }
    }
  }
  for (NodeId i = 0; i < n; ++i) {
    if (!s.nodes[i].alive) continue;
    if (attempts[i] > 0) s.contact_success[i] = static_cast<double>(successes[i]) / attempts[i];
    else if (in_degree[i] + out_degree[i] == 0) s.contact_success[i] = 0.0;
    else s.contact_success[i] = std::nullopt;
  }

  // Merges in ascending receiver order, packets in ascending source order.
  struct Utility {
    NodeId i, j;
    double u;
  };
  std::vector<Utility> utilities;
  for (NodeId i = 0; i < n; ++i) {
    if (inbox[i].empty()) continue;
    std::sort(inbox[i].begin(), inbox[i].end(),
              [](const Delivery& a, const Delivery& b) { return a.packet.source < b.packet.source; });
    std::vector<KnowledgePacket> packets;
    for (auto& d : inbox[i]) packets.push_back(std::move(d.packet));
    NodeState& node = s.nodes[i];
    const WeightVector w = compute_weights(i, in_degree[i], packets, policy, s.trust);
    if (w.fallback) log_event(s, "weights-fallback", i);
    if (!gossip && policy.kind != MergeKind::none) {
      const double base = node.validation.empty() ? 0.0 : evaluate_accuracy(node.params, node.validation);
      for (const auto& pk : packets)
        utilities.push_back({i, pk.source,
                             candidate_utility(node, pk, policy, s.probe, cfg.training, base,
                                               cfg.trust.utility_scale)});
    }
    const MergeOutcome out = merge(node, packets, w, policy, s.probe);
    for (std::size_t k = 0; k < out.rejected.size(); ++k)
      log_event(s, "packet-rejected", i, {{"source", out.rejected[k]}, {"reason", out.reasons[k]}});
    if (out.merged) {
      tag(s, i, "merge");
      log_event(s, "merge", i,
                {{"policy", to_string(policy.kind)}, {"sources", out.accepted}, {"bytes", out.bytes}});
    }
  }

  // Phase 7.
  if (!gossip)
    for (const auto& u : utilities) update_trust_inplace(s.trust, u.i, u.j, u.u);
}

// Server-mediated rounds: upload, sample-weighted average, broadcast. The
// server is virtual and lossless unless hosted on a node, in which case it
// stops when that node drops out.
inline void federated_phase(SimState& s, const ScenarioConfig& cfg) {
  if (!s.server_alive) return;
  const auto host = cfg.federated.server_host;
  if (host && !s.nodes[*host].alive) {
    s.server_alive = false;
    log_event(s, "server-lost", *host);
    tag_population(s, "server-lost");
    return;
  }
  const auto radios = radios_of(cfg);
  std::vector<NodeId> uploaded;
  std::uint64_t bytes = 0;
  for (auto& node : s.nodes) {
    if (!node.alive) continue;
    const std::uint64_t size = packet_byte_size(node.params.values.size());
    bytes = size;
    if (host && node.id == *host) {
      uploaded.push_back(node.id);
      continue;
    }
    const double tx = radios[node.id].tx_energy * static_cast<double>(size);
    if (!node.battery.can_afford(tx)) {
      log_event(s, "upload-skipped", node.id);
      continue;
    }
    if (host) {
      const double rx = radios[*host].rx_energy * static_cast<double>(size);
      if (!s.nodes[*host].battery.can_afford(rx)) continue;
      s.nodes[*host].battery.debit(rx);
      spend(s, *host, EnergyKind::rx, rx);
      s.counters[*host].bytes_rx += size;
    }
    node.battery.debit(tx);
    spend(s, node.id, EnergyKind::tx, tx);
    s.counters[node.id].bytes_tx += size;
    uploaded.push_back(node.id);
  }
  if (uploaded.empty()) return;

  double total = 0.0;
  for (NodeId i : uploaded) total += static_cast<double>(s.nodes[i].round_samples);
  std::vector<double> w;
  for (NodeId i : uploaded)
    w.push_back(total > 0.0 ? static_cast<double>(s.nodes[i].round_samples) / total
                            : 1.0 / static_cast<double>(uploaded.size()));
  // theta = theta_1 + sum_{k>=2} w_k (theta_k - theta_1); exact for one node.
  std::vector<double> agg = s.nodes[uploaded[0]].params.values;
  const std::vector<double> first = agg;
  for (std::size_t k = 1; k < uploaded.size(); ++k) {
    if (w[k] == 0.0) continue;
    const auto& v = s.nodes[uploaded[k]].params.values;
    for (std::size_t p = 0; p < agg.size(); ++p) agg[p] += w[k] * (v[p] - first[p]);
  }

  for (auto& node : s.nodes) {
    if (!node.alive) continue;
    if (host && node.id != *host) {
      const double tx = radios[*host].tx_energy * static_cast<double>(bytes);
      const double rx = radios[node.id].rx_energy * static_cast<double>(bytes);
      if (!s.nodes[*host].battery.can_afford(tx) || !node.battery.can_afford(rx)) {
        log_event(s, "broadcast-missed", node.id);
        continue;
      }
      s.nodes[*host].battery.debit(tx);
      spend(s, *host, EnergyKind::tx, tx);
      s.counters[*host].bytes_tx += bytes;
      node.battery.debit(rx);
      spend(s, node.id, EnergyKind::rx, rx);
      s.counters[node.id].bytes_rx += bytes;
    } else if (!host) {
      const double rx = radios[node.id].rx_energy * static_cast<double>(bytes);
      if (!node.battery.can_afford(rx)) {
        log_event(s, "broadcast-missed", node.id);
        continue;
      }
      node.battery.debit(rx);
      spend(s, node.id, EnergyKind::rx, rx);
      s.counters[node.id].bytes_rx += bytes;
    }
    node.params.values = agg;
    ++node.params.version;
    node.round_samples = 0;
    sync_energy(node);
    tag(s, node.id, "aggregate");
  }
  log_event(s, "round", -1, {{"participants", uploaded}});
}

inline std::string join_tags(std::vector<std::string>& tags) {
  std::string out;
  for (const auto& t : tags) out += (out.empty() ? "" : ";") + t;
  tags.clear();
  return out;
}

inline void metrics_phase(SimState& s, const ScenarioConfig& cfg) {
  MetricRecord pop;
  pop.tick = s.tick;
  pop.node = kPopulation;
  double acc_sum = 0.0;
  std::size_t honest = 0;
  for (const auto& node : s.nodes) {
    auto& c = s.counters[node.id];
    // Totals include every node so the population ledger stays monotone.
    pop.energy_j += c.energy;
    pop.compute_energy_j += c.compute;
    pop.bytes_tx += c.bytes_tx;
    pop.bytes_rx += c.bytes_rx;
    pop.updates += node.updates;
    pop.skipped += node.skipped_updates;
    if (!node.alive) continue;
    MetricRecord r;
    r.tick = s.tick;
    r.node = node.id;
    r.accuracy = evaluate_accuracy(node.params, s.test_set);
    r.energy_j = c.energy;
    r.compute_energy_j = c.compute;
    r.bytes_tx = c.bytes_tx;
    r.bytes_rx = c.bytes_rx;
    r.updates = node.updates;
    r.skipped = node.skipped_updates;
    r.events = join_tags(c.tags);
    if (node.adversary == AdversaryKind::none) {
      acc_sum += r.accuracy;
      ++honest;
    }
    s.records.push_back(std::move(r));
  }
  pop.accuracy = honest ? acc_sum / static_cast<double>(honest) : 0.0;
  pop.events = join_tags(s.population_tags);
  s.records.push_back(std::move(pop));
  if (cfg.output.trust_snapshots)
    for (NodeId i = 0; i < s.trust.rows.size(); ++i)
      for (const auto& [j, v] : s.trust.rows[i]) s.trust_log.push_back({s.tick, i, j, v});
}

inline void drift_phase(SimState& s, const ScenarioConfig& cfg) {
  if (s.data.schedule.empty() || s.data.schedule.front().tick != s.tick) return;
  const DriftEvent ev = s.data.schedule.front();
  s.data = inject_drift(std::move(s.data), s.tick);
  ++s.data_epoch;
  regenerate_eval_sets(s, cfg);
  s.drift_onsets.push_back(s.tick + 1);
  log_event(s, "drift", -1, {{"drift_kind", to_string(ev.kind)}, {"magnitude", ev.magnitude}, {"onset", s.tick + 1}});
  tag_population(s, "drift");
}

}  // namespace detail

// Advance one tick. Phase order:
//   0 scheduled dropout
//   1 mobility           2 contacts
//   3 clusters, roles, leases
//   4 harvest, sampling, context update, local steps
//   5 peer selection and transmission (relays via cluster coordinators)
//   6 merges             7 trust updates
//   8 metrics            9 drift
// With merge_order = before-step, phases 5-7 run before phase 4.
inline void tick(SimState& s, const ScenarioConfig& cfg) {
  if (s.halted || s.tick >= cfg.ticks) return;
  detail::apply_dropout(s, cfg);

  if (s.tick > 0) s.mobility = step_mobility(std::move(s.mobility));
  if (s.mobility.model == MobilityModel::trace && s.mobility.exhausted) {
    s.halted = true;
    detail::log_event(s, "trace-exhausted", -1);
    return;
  }

  const bool networked = cfg.regime == Regime::node_learning || cfg.regime == Regime::gossip;
  std::vector<ContactEvent> contacts;
  if (networked) contacts = detail::contacts_for(s, cfg);
  if (cfg.regime == Regime::gossip && s.tick == 0 &&
      !detail::graph_connected(s.nodes.size(), contacts, s.nodes))
    detail::log_event(s, "warning", -1, {{"message", "topology is disconnected; consensus not expected"}});

  if (cfg.regime == Regime::node_learning && cfg.coalition.enabled) {
    detail::coalition_phase(s, cfg, contacts);
    if (cfg.offload.enabled) detail::offload_phase(s, cfg, contacts);
  }

  const bool exchange_now = s.tick % cfg.exchange.cadence == 0;
  const bool before = cfg.exchange.merge_before_step && networked;
  if (before && exchange_now) detail::exchange_phase(s, cfg, contacts);
  detail::local_phase(s, cfg);
  if (!before && exchange_now && networked) detail::exchange_phase(s, cfg, contacts);
  if (cfg.regime == Regime::federated && exchange_now) detail::federated_phase(s, cfg);

  std::vector<double> levels;
  for (const auto& n : s.nodes) levels.push_back(n.battery.level);
  s.ledger.snapshot(s.tick, levels);

  if (s.tick % cfg.metrics.cadence == 0 || s.tick + 1 == cfg.ticks) detail::metrics_phase(s, cfg);
  detail::drift_phase(s, cfg);
  ++s.tick;
}

// Run to completion (or until `stop_at`, exclusive) from the given state.
inline void run(SimState& s, const ScenarioConfig& cfg, std::optional<Tick> stop_at = std::nullopt) {
  const Tick end = stop_at ? std::min(*stop_at, cfg.ticks) : cfg.ticks;
  while (s.tick < end && !s.halted) tick(s, cfg);
}

inline SimState run(const ScenarioConfig& cfg) {
  SimState s = initial_state(cfg);
  run(s, cfg);
  return s;
}

// Both regimes are configurations of the same engine; these only pin the
// regime-defining fields.
inline SimState run_federated_regime(ScenarioConfig cfg) {
  cfg.regime = Regime::federated;
  cfg.exchange.policy.kind = MergeKind::average;
  return run(cfg);
}

inline SimState run_gossip_regime(ScenarioConfig cfg) {
  cfg.regime = Regime::gossip;
  cfg.exchange.policy.kind = MergeKind::average;
  cfg.exchange.policy.weights = WeightRule::metropolis;
  return run(cfg);
}

inline std::vector<double> battery_levels(const SimState& s) {
  std::vector<double> v;
  for (const auto& n : s.nodes) v.push_back(n.battery.level);
  return v;
}

inline AuditResult audit_energy(const SimState& s, double rel_tol = 1e-9) {
  return energy_ledger_check(s.ledger, battery_levels(s), rel_tol);
}

}  // namespace nodelearn
