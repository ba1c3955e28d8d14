#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "oracles.hpp"

using namespace nltest;

namespace {

// Static all-to-all neighbourhood with a lossless radio.
json clique(std::size_t n, const std::string& regime) {
  return json{
      {"name", "clique"},
      {"seed", 5},
      {"ticks", 5},
      {"regime", regime},
      {"radios", {{"clean", {{"data_rate", 1e6}, {"tx_energy", 1e-8}, {"rx_energy", 1e-8}, {"range", 1000}, {"base_loss", 0.0}}}}},
      {"templates", {{"t", {{"capacity", "npu"}, {"radio", "clean"}}}}},
      {"nodes", {{"count", n}, {"template", "t"}}},
      {"model", {{"init", "per-node"}, {"local_steps", 0}}},
      {"data", {{"classes", 3}, {"features", 4}}},
      {"mobility", {{"model", "static"}, {"layout", "grid"}, {"spacing", 1.0}}},
      {"coalition", {{"enabled", false}}},
  };
}

bool has_event(const SimState& s, const std::string& kind) {
  return std::any_of(s.events.begin(), s.events.end(),
                     [&](const json& e) { return e.at("kind") == kind; });
}

}  // namespace

TEST(Engine, IsolatedEqualsStandaloneTraining) {
  auto j = small_scenario("isolated", 40);
  j["model"] = {{"local_steps", 2}};
  const auto cfg = parse(j);
  const auto s = run(cfg);
  const auto ref = oracle::standalone_isolated(cfg);
  ASSERT_EQ(s.nodes.size(), ref.size());
  for (std::size_t i = 0; i < ref.size(); ++i) {
    EXPECT_EQ(s.nodes[i].params.values, ref[i].params.values) << "node " << i;
    EXPECT_EQ(s.nodes[i].updates, ref[i].updates);
    EXPECT_EQ(s.nodes[i].battery.level, ref[i].battery.level);
  }
  for (const auto& r : s.records) {
    EXPECT_EQ(r.bytes_tx, 0u);
    EXPECT_EQ(r.bytes_rx, 0u);
  }
}

TEST(Engine, ZeroNodesIsIdentity) {
  auto j = small_scenario("node-learning", 5);
  j["nodes"] = {{"count", 0}};
  j["mobility"] = {{"model", "static"}};
  const auto cfg = parse(j);
  auto s = initial_state(cfg);
  run(s, cfg);
  EXPECT_TRUE(s.nodes.empty());
  EXPECT_TRUE(audit_energy(s).ok);
  for (const auto& r : s.records) {
    EXPECT_EQ(r.node, kPopulation);
    EXPECT_EQ(r.energy_j, 0.0);
  }
}

TEST(Engine, SameConfigAndSeedGiveIdenticalMetrics) {
  auto j = small_scenario("node-learning", 40);
  j["exchange"] = {{"policy", "average"}, {"weights", "trust-context"}};
  const auto cfg = parse(j);
  const auto a = run(cfg), b = run(cfg);
  EXPECT_EQ(metrics::format_records(a.records), metrics::format_records(b.records));
  EXPECT_EQ(a.events, b.events);
  j["seed"] = 4;
  EXPECT_NE(metrics::format_records(run(parse(j)).records), metrics::format_records(a.records));
}

TEST(Engine, DropoutDoesNotHaltTheRun) {
  auto j = small_scenario("node-learning", 30);
  j["dropout"] = json::array({{{"tick", 10}, {"fraction", 0.4}}});
  const auto cfg = parse(j);
  const auto s = run(cfg);
  EXPECT_EQ(s.tick, 30);
  EXPECT_EQ(metrics::final_nodes(s.records).size(), 3u);
  std::size_t dead = 0;
  for (const auto& n : s.nodes) dead += !n.alive;
  EXPECT_EQ(dead, 2u);
  for (const auto& r : s.records)
    if (r.node >= 0 && r.tick >= 10) EXPECT_TRUE(s.nodes[static_cast<std::size_t>(r.node)].alive);
  EXPECT_TRUE(audit_energy(s).ok);
}

TEST(Engine, DriftTakesEffectOnTheFollowingTick) {
  auto j = small_scenario("isolated", 20);
  j["data"]["drift"] = json::array({{{"tick", 7}, {"kind", "prototype-rotation"}, {"magnitude", 1.0}, {"axes", {0, 1}}}});
  const auto s = run(parse(j));
  EXPECT_EQ(s.drift_onsets, std::vector<Tick>{8});
  EXPECT_EQ(s.data_epoch, 1u);
}

TEST(Engine, CumulativeMetricsNeverDecrease) {
  auto j = small_scenario("node-learning", 40);
  j["dropout"] = json::array({{{"tick", 20}, {"nodes", {1}}}});
  const auto s = run(parse(j));
  std::map<std::int64_t, MetricRecord> prev;
  for (const auto& r : s.records) {
    if (auto it = prev.find(r.node); it != prev.end()) {
      EXPECT_GE(r.energy_j, it->second.energy_j);
      EXPECT_GE(r.compute_energy_j, it->second.compute_energy_j);
      EXPECT_GE(r.bytes_tx, it->second.bytes_tx);
      EXPECT_GE(r.bytes_rx, it->second.bytes_rx);
      EXPECT_GE(r.updates, it->second.updates);
    }
    prev[r.node] = r;
  }
}

TEST(Engine, EnergyAuditPassesWithEveryMechanismOn) {
  auto j = small_scenario("node-learning", 60);
  j["nodes"] = {{"count", 8}};
  j["exchange"] = {{"relay", true}, {"budget_bytes", 400}};
  j["offload"] = {{"enabled", true}};
  j["replay"] = {{"per_step", 2}};
  j["templates"] = {{"t", {{"capacity", "mcu"}, {"radio", "ble"}, {"replay_capacity", 16}}}};
  j["nodes"]["template"] = "t";
  j["capacities"] = {{"mcu", {{"memory_bytes", 600}, {"compute_score", 1.0}, {"battery_joules", 0.2}, {"harvest_rate", 0.001}}}};
  const auto s = run(parse(j));
  const auto audit = audit_energy(s);
  EXPECT_TRUE(audit.ok) << audit.message;
}

TEST(Engine, TamperedBatteryIsCaughtByTheAudit) {
  auto s = initial_state(parse(small_scenario("node-learning", 20)));
  const auto cfg = parse(small_scenario("node-learning", 20));
  run(s, cfg, 10);
  s.nodes[2].battery.level -= 0.5;
  run(s, cfg);
  const auto a = audit_energy(s);
  EXPECT_FALSE(a.ok);
  EXPECT_EQ(a.node, 2u);
  EXPECT_EQ(a.tick, 10);
}

TEST(Federated, OneNodeMatchesIsolated) {
  auto j = small_scenario("isolated", 30);
  j["nodes"] = {{"count", 1}};
  j["context"] = {{"gate", false}};
  const auto iso = run(parse(j));
  j["regime"] = "federated";
  const auto fed = run(parse(j));
  EXPECT_EQ(fed.nodes[0].params.values, iso.nodes[0].params.values);
}

TEST(Federated, ZeroLocalStepsNeverChangeParameters) {
  auto j = small_scenario("federated", 10);
  j["model"] = {{"local_steps", 0}, {"init", "per-node"}};
  const auto cfg = parse(j);
  const auto s0 = initial_state(cfg);
  // Per-node init differs, so the first round averages; after that nothing moves.
  auto s = s0;
  tick(s, cfg);
  const auto after_first = s.nodes[0].params.values;
  run(s, cfg);
  for (const auto& n : s.nodes) EXPECT_EQ(n.params.values, after_first);
  j["model"]["init"] = "common";
  const auto c0 = initial_state(parse(j));
  const auto c = run(parse(j));
  for (std::size_t i = 0; i < c.nodes.size(); ++i) EXPECT_EQ(c.nodes[i].params.values, c0.nodes[i].params.values);
}

TEST(Federated, MatchesReferenceFedAvg) {
  auto j = small_scenario("federated", 3);
  j["model"] = {{"local_steps", 2}};
  j["context"] = {{"gate", false}};
  const auto cfg = parse(j);
  const auto s = run(cfg);
  const auto ref = oracle::reference_fedavg(cfg, 3);
  for (const auto& n : s.nodes)
    for (std::size_t k = 0; k < ref.size(); ++k) ASSERT_NEAR(n.params.values[k], ref[k], 1e-12);
}

TEST(Federated, HostedServerStopsWhenItsHostDrops) {
  auto j = small_scenario("federated", 20);
  j["federated"] = {{"server_host", 2}};
  j["dropout"] = json::array({{{"tick", 5}, {"nodes", {2}}}});
  const auto s = run(parse(j));
  EXPECT_FALSE(s.server_alive);
  EXPECT_TRUE(has_event(s, "server-lost"));
  EXPECT_EQ(s.tick, 20);
}

TEST(Gossip, CompleteGraphReachesExactMeanInOneRound) {
  const auto cfg = parse(clique(5, "gossip"));
  auto s = initial_state(cfg);
  const std::size_t dim = s.nodes[0].params.values.size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& n : s.nodes)
    for (std::size_t k = 0; k < dim; ++k) mean[k] += n.params.values[k] / 5.0;
  tick(s, cfg);
  for (const auto& n : s.nodes)
    for (std::size_t k = 0; k < dim; ++k) EXPECT_NEAR(n.params.values[k], mean[k], 1e-12);
}

TEST(Gossip, RingConvergesWithinOracleRoundCount) {
  const std::size_t n = 6;
  auto j = clique(n, "gossip");
  j["radios"]["clean"]["range"] = 12.0;
  j["mobility"] = {{"model", "static"}, {"layout", "ring"}, {"spacing", 10.0}};
  j["ticks"] = 400;
  const auto cfg = parse(j);
  auto s = initial_state(cfg);
  std::vector<std::vector<double>> x;
  for (const auto& nd : s.nodes) x.push_back(nd.params.values);
  std::vector<std::vector<bool>> adj(n, std::vector<bool>(n, false));
  for (std::size_t i = 0; i < n; ++i) adj[i][(i + 1) % n] = adj[(i + 1) % n][i] = true;
  const int predicted = oracle::gossip_rounds_to(oracle::metropolis_matrix(adj), x, 1e-6);
  ASSERT_GT(predicted, 0);
  const double d0 = oracle::max_pairwise_distance(x);
  int observed = -1;
  double prev = d0;
  for (int r = 1; r <= 400 && observed < 0; ++r) {
    tick(s, cfg);
    x.clear();
    for (const auto& nd : s.nodes) x.push_back(nd.params.values);
    const double d = oracle::max_pairwise_distance(x);
    EXPECT_LE(d, prev * (1 + 1e-12));
    prev = d;
    if (d < 1e-6 * d0) observed = r;
  }
  EXPECT_NEAR(observed, predicted, 1);
}

TEST(Gossip, DisconnectedTopologyWarns) {
  auto j = clique(4, "gossip");
  j["radios"]["clean"]["range"] = 5.0;
  j["mobility"]["spacing"] = 10.0;
  const auto s = run(parse(j));
  EXPECT_TRUE(has_event(s, "warning"));
  EXPECT_FALSE(has_event(run(parse(clique(4, "gossip"))), "warning"));
}

TEST(Gossip, SingleNodeIsIsolatedTraining) {
  auto j = small_scenario("gossip", 20);
  j["nodes"] = {{"count", 1}};
  j["mobility"] = {{"model", "static"}};
  const auto g = run(parse(j));
  j["regime"] = "isolated";
  EXPECT_EQ(g.nodes[0].params.values, run(parse(j)).nodes[0].params.values);
}

TEST(Roles, RotationDoesNotShortenMinimumLifetime) {
  // Four co-located identical nodes; coordinator duty is the dominant drain.
  auto base = clique(4, "node-learning");
  base["ticks"] = 400;
  base["model"] = {{"local_steps", 1}};
  base["capacities"] = {{"cell", {{"memory_bytes", 1000000}, {"compute_score", 1.0}, {"battery_joules", 1.0}}}};
  base["templates"]["t"]["capacity"] = "cell";
  base["energy"] = {{"step_joules", 1e-3}, {"coordinator_joules", 1e-2}};
  base["coalition"] = {{"enabled", true}, {"ttl", 1000}};
  base["exchange"] = {{"policy", "none"}};
  auto lifetime = [](json j) {
    const auto cfg = parse(j);
    auto s = initial_state(cfg);
    std::vector<Tick> dead(s.nodes.size(), cfg.ticks);
    while (s.tick < cfg.ticks) {
      tick(s, cfg);
      for (const auto& n : s.nodes)
        if (dead[n.id] == cfg.ticks && n.battery.level < cfg.energy.step_joules) dead[n.id] = s.tick;
    }
    return *std::min_element(dead.begin(), dead.end());
  };
  auto with = base, without = base;
  with["energy"]["role_rotation"] = true;
  without["energy"]["role_rotation"] = false;
  const Tick a = lifetime(with), b = lifetime(without);
  EXPECT_GE(a, b);
  EXPECT_LT(b, 400);
}
