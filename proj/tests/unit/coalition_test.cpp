#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"

using namespace nltest;

namespace {

std::vector<ContactEvent> mutual(std::initializer_list<std::pair<NodeId, NodeId>> edges) {
  std::vector<ContactEvent> out;
  for (auto [a, b] : edges) {
    out.push_back({0, a, b, 1.0, 0.0, 1000});
    out.push_back({0, b, a, 1.0, 0.0, 1000});
  }
  return out;
}

}  // namespace

TEST(Clusters, NoContactsGivesSingletons) {
  std::uint64_t next = 0;
  const std::vector<double> cap{1, 1, 1};
  const auto cs = form_clusters({}, cap, 0, 5, next);
  ASSERT_EQ(cs.size(), 3u);
  for (NodeId i = 0; i < 3; ++i) {
    EXPECT_EQ(cs[i].members, std::vector<NodeId>{i});
    EXPECT_EQ(cs[i].coordinator, i);
  }
  EXPECT_EQ(next, 3u);
}

TEST(Clusters, TriangleElectsHighestCapacity) {
  std::uint64_t next = 0;
  const std::vector<double> cap{1, 3, 2};
  const auto ev = mutual({{0, 1}, {1, 2}, {0, 2}});
  const auto cs = form_clusters(ev, cap, 4, 5, next);
  ASSERT_EQ(cs.size(), 1u);
  EXPECT_EQ(cs[0].coordinator, 1u);
  EXPECT_EQ(cs[0].formed_at, 4);
  const std::vector<double> tie{2, 2, 1};
  std::uint64_t n2 = 0;
  EXPECT_EQ(form_clusters(ev, tie, 0, 5, n2)[0].coordinator, 0u);
}

TEST(Clusters, OneWayContactsDoNotJoin) {
  std::uint64_t next = 0;
  const std::vector<double> cap{1, 1};
  const std::vector<ContactEvent> ev{{0, 0, 1, 1.0, 0.0, 10}};
  EXPECT_EQ(form_clusters(ev, cap, 0, 5, next).size(), 2u);
}

TEST(Clusters, FormationIsPureAndCoordinatorIsMember) {
  auto m = make_random_waypoint(15, 60, 60, 1, 3, 8);
  std::vector<RadioProfile> radios(15, *builtin_radio("ble"));
  Rng rng(2);
  std::vector<double> cap;
  for (int i = 0; i < 15; ++i) cap.push_back(static_cast<double>(rng.below(3)));
  for (int t = 0; t < 30; ++t) {
    const auto ev = compute_contacts(m, radios, t);
    std::uint64_t a = 0, b = 0;
    const auto x = form_clusters(ev, cap, t, 3, a);
    const auto y = form_clusters(ev, cap, t, 3, b);
    EXPECT_EQ(x, y);
    std::size_t total = 0;
    for (const auto& c : x) {
      EXPECT_TRUE(c.contains(c.coordinator));
      EXPECT_TRUE(cluster_intact(c, ev));
      total += c.members.size();
    }
    EXPECT_EQ(total, 15u);
    m = step_mobility(m);
  }
}

TEST(Clusters, DissolutionRules) {
  std::uint64_t next = 0;
  const std::vector<double> cap{1, 1, 1};
  const auto ev = mutual({{0, 1}, {1, 2}});
  const auto cs = form_clusters(ev, cap, 10, 0, next);
  EXPECT_TRUE(dissolve_expired(cs, 11, ev).empty());

  const auto lasting = form_clusters(ev, cap, 10, 5, next);
  EXPECT_EQ(dissolve_expired(lasting, 15, ev).size(), 1u);
  EXPECT_TRUE(dissolve_expired(lasting, 16, ev).empty());
  EXPECT_TRUE(dissolve_expired(lasting, 12, mutual({{0, 1}})).empty());
}

TEST(Trust, EwmaExamples) {
  TrustGraph g(2, 0.9, 0.5);
  EXPECT_NEAR(update_trust(g, 0, 1, 1.0).trust(0, 1), 0.55, 1e-15);
  EXPECT_DOUBLE_EQ(update_trust(g, 0, 1, 0.5).trust(0, 1), 0.5);
  double expect = 0.5;
  for (int n = 0; n < 40; ++n) {
    g = update_trust(g, 0, 1, 0.0);
    expect *= 0.9;
    EXPECT_NEAR(g.trust(0, 1), expect, 1e-15);
  }
  EXPECT_DOUBLE_EQ(g.trust(1, 0), 0.5);
}

TEST(Trust, ScoresStayInUnitInterval) {
  Rng rng(5);
  TrustGraph g(3, 0.7, 0.5);
  for (int n = 0; n < 5000; ++n) {
    update_trust_inplace(g, rng.below(3), rng.below(3), rng.uniform(-5.0, 5.0));
    for (const auto& row : g.rows)
      for (const auto& [j, v] : row) {
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 1.0);
      }
  }
}

namespace {

// First interaction count n at which the adversary's normalised
// trust-context weight drops below 1e-3, straight from the closed form
// trust_n = t0 * beta^n with `honest` fully connected peers at trust h.
int oracle_crossing(double t0, double beta, int honest, double h) {
  for (int n = 1; n < 1000; ++n) {
    const double t = t0 * std::pow(beta, n);
    const double peers = t + honest * h;
    const double self = std::max(0.5, 1.0 - peers);
    if (t / (self + peers) < 1e-3) return n;
  }
  return -1;
}

int engine_crossing(int honest, double h) {
  const NodeId n = static_cast<NodeId>(honest + 2);
  TrustGraph g(n, 0.9, 0.5);
  std::vector<KnowledgePacket> pk;
  for (NodeId j = 1; j < n; ++j) {
    auto p = params_packet(j, init_params(j, linear_cfg(), 2, 2));
    p.context.connectivity = 1.0;
    pk.push_back(p);
    if (j > 1) g.rows[0][j] = h;
  }
  MergePolicy pol;
  pol.weights = WeightRule::trust_context;
  for (int k = 1; k < 1000; ++k) {
    update_trust_inplace(g, 0, 1, 0.0);
    if (std::abs(g.trust(0, 1) - 0.5 * std::pow(0.9, k)) > 1e-12) return -2;
    if (compute_weights(0, n - 1, pk, pol, g).w[1] < 1e-3) return k;
  }
  return -1;
}

}  // namespace

TEST(Trust, HarmfulPeerWeightMatchesClosedFormOracle) {
  for (int honest : {0, 1, 3, 6, 10})
    for (double h : {0.5, 1.0}) {
      const int oracle = oracle_crossing(0.5, 0.9, honest, h);
      ASSERT_GT(oracle, 0);
      EXPECT_EQ(engine_crossing(honest, h), oracle) << honest << " honest peers at trust " << h;
    }
}

TEST(Trust, HarmfulPeerExcludedWithinFiftyInteractionsInAPopulatedNeighbourhood) {
  // Six honest neighbours at the stranger default: the weight is diluted by
  // their mass and crosses 1e-3 before interaction 50.
  const int n = engine_crossing(6, 0.5);
  EXPECT_GT(n, 0);
  EXPECT_LE(n, 50);
  // A lone adversary normalised only against the self weight needs longer;
  // the bound is a property of the neighbourhood, not of the decay alone.
  EXPECT_GT(engine_crossing(0, 0.5), 50);
}

TEST(Trust, ObservedUtilityIsLogistic) {
  EXPECT_DOUBLE_EQ(observed_utility(0.0), 0.5);
  EXPECT_NEAR(observed_utility(0.02), 1.0 / (1.0 + std::exp(-1.0)), 1e-15);
  EXPECT_LT(observed_utility(-0.1), 0.01);
}

TEST(PeerSelection, Examples) {
  TrustGraph g(3, 0.9, 0.5);
  const std::vector<PeerCandidate> c{{1, 0.5, 100}, {2, 0.1, 100}};
  EXPECT_TRUE(select_peers(0, c, g, 0).empty());
  EXPECT_EQ(select_peers(0, std::vector<PeerCandidate>{{1, 0.0, 100}}, g, 100), std::vector<NodeId>{1});
  EXPECT_EQ(select_peers(0, c, g, 1000), (std::vector<NodeId>{2, 1}));
  EXPECT_EQ(select_peers(0, c, g, 150), std::vector<NodeId>{2});
  g.rows[0][2] = 0.0;
  EXPECT_EQ(select_peers(0, c, g, 1000), std::vector<NodeId>{1});
  const std::vector<PeerCandidate> tie{{2, 0.0, 10}, {1, 0.0, 10}};
  TrustGraph h(3, 0.9, 0.5);
  EXPECT_EQ(select_peers(0, tie, h, 100), (std::vector<NodeId>{1, 2}));
}
