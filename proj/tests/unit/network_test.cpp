#include <gtest/gtest.h>

#include <fstream>

#include "helpers.hpp"

using namespace nltest;

namespace {

RadioProfile radio(double range, double loss = 0.0, double rate = 1000.0) {
  RadioProfile r;
  r.range = range;
  r.base_loss = loss;
  r.data_rate = rate;
  r.tx_energy = 1e-6;
  r.rx_energy = 5e-7;
  return r;
}

ContactEvent contact(std::uint64_t max_bytes, double loss = 0.0) {
  ContactEvent ev;
  ev.from = 0;
  ev.to = 1;
  ev.max_bytes = max_bytes;
  ev.loss_prob = loss;
  return ev;
}

}  // namespace

TEST(Radio, BuiltinsValidateAndUnknownIsEmpty) {
  for (const char* n : {"ble", "lora", "wifi"}) {
    auto r = builtin_radio(n);
    ASSERT_TRUE(r.has_value());
    EXPECT_NO_THROW(r->validate());
  }
  EXPECT_FALSE(builtin_radio("carrier-pigeon").has_value());
  RadioProfile bad;
  bad.data_rate = 0.0;
  EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Radio, LossGrowsWithDistanceAndCapsAtOne) {
  auto r = radio(10.0, 0.2);
  r.loss_exponent = 2.0;
  EXPECT_DOUBLE_EQ(r.loss_at(0.0), 0.0);
  EXPECT_DOUBLE_EQ(r.loss_at(10.0), 0.2);
  EXPECT_DOUBLE_EQ(r.loss_at(5.0), 0.05);
  r.base_loss = 1.0;
  EXPECT_DOUBLE_EQ(r.loss_at(100.0), 1.0);
}

TEST(Layout, GridAndRingGeometry) {
  const auto g = grid_layout(10, 5.0);
  ASSERT_EQ(g.size(), 10u);
  EXPECT_EQ(g[3], (Vec2{15.0, 0.0}));
  EXPECT_EQ(g[4], (Vec2{0.0, 5.0}));
  const auto r = ring_layout(7, 3.0);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_NEAR(distance(r[i], r[(i + 1) % 7]), 3.0, 1e-12);
}

TEST(Contacts, RangeBoundaryIsInclusive) {
  const auto m = make_static({{0, 0}, {10, 0}, {20.5, 0}});
  std::vector<RadioProfile> radios(3, radio(10.0));
  const auto ev = compute_contacts(m, radios, 0);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].from, 0u);
  EXPECT_EQ(ev[0].to, 1u);
  EXPECT_EQ(ev[1].from, 1u);
  EXPECT_EQ(ev[1].to, 0u);
  EXPECT_EQ(ev[0].max_bytes, 1000u);
}

TEST(Contacts, UnequalRadiosUseSmallerRangeAndSenderLoss) {
  const auto m = make_static({{0, 0}, {8, 0}});
  std::vector<RadioProfile> radios{radio(10.0, 0.5, 500.0), radio(8.0, 0.1, 2000.0)};
  const auto ev = compute_contacts(m, radios, 4);
  ASSERT_EQ(ev.size(), 2u);
  EXPECT_EQ(ev[0].time, 4);
  EXPECT_DOUBLE_EQ(ev[0].loss_prob, radios[0].loss_at(8.0));
  EXPECT_DOUBLE_EQ(ev[1].loss_prob, radios[1].loss_at(8.0));
  EXPECT_EQ(ev[0].max_bytes, 500u);
  EXPECT_EQ(ev[1].max_bytes, 2000u);
  std::vector<RadioProfile> shorter{radio(10.0), radio(7.9)};
  EXPECT_TRUE(compute_contacts(m, shorter, 0).empty());
}

TEST(Contacts, InactiveNodesExcluded) {
  const auto m = make_static({{0, 0}, {1, 0}, {2, 0}});
  std::vector<RadioProfile> radios(3, radio(10.0));
  std::vector<bool> active{true, false, true};
  for (const auto& e : compute_contacts(m, radios, 0, 1.0, &active)) {
    EXPECT_NE(e.from, 1u);
    EXPECT_NE(e.to, 1u);
  }
  EXPECT_EQ(compute_contacts(m, radios, 0, 1.0, &active).size(), 2u);
}

TEST(Contacts, SymmetricForEqualRadios) {
  auto m = make_random_waypoint(12, 50, 50, 1, 3, 5);
  std::vector<RadioProfile> radios(12, radio(20.0, 0.3));
  for (int t = 0; t < 20; ++t) {
    const auto ev = compute_contacts(m, radios, t);
    for (const auto& e : ev) {
      auto rev = std::find_if(ev.begin(), ev.end(),
                              [&](const ContactEvent& o) { return o.from == e.to && o.to == e.from; });
      ASSERT_NE(rev, ev.end());
      EXPECT_DOUBLE_EQ(rev->distance, e.distance);
    }
    m = step_mobility(m);
  }
}

TEST(Mobility, StaticIsIdentityAndWaypointStaysInArena) {
  const auto s = make_static({{1, 2}, {3, 4}});
  EXPECT_EQ(step_mobility(s).positions, s.positions);
  auto m = make_random_waypoint(8, 30, 20, 0.5, 4, 9);
  for (int t = 0; t < 500; ++t) {
    const auto before = m.positions;
    m = step_mobility(m);
    for (std::size_t i = 0; i < m.size(); ++i) {
      EXPECT_GE(m.positions[i].x, 0.0);
      EXPECT_LE(m.positions[i].x, 30.0);
      EXPECT_GE(m.positions[i].y, 0.0);
      EXPECT_LE(m.positions[i].y, 20.0);
      EXPECT_LE(distance(before[i], m.positions[i]), 4.0 + 1e-12);
    }
  }
  EXPECT_THROW(make_random_waypoint(2, 10, 10, 0, 1, 1), ConfigError);
}

TEST(Mobility, DeterministicForSeed) {
  auto a = make_random_waypoint(5, 40, 40, 1, 2, 77);
  auto b = make_random_waypoint(5, 40, 40, 1, 2, 77);
  for (int t = 0; t < 100; ++t) {
    a = step_mobility(a);
    b = step_mobility(b);
  }
  EXPECT_EQ(a.positions, b.positions);
}

TEST(Mobility, TraceReplaysRowsAndFlagsExhaustion) {
  const auto dir = scratch("trace");
  std::ofstream(dir / "t.csv") << "t,from,to,distance\n0,0,1,3\n0,1,0,3\n2,1,2,50\n2,2,1,5\n";
  auto m = make_trace(3, load_contact_trace((dir / "t.csv").string()));
  std::vector<RadioProfile> radios(3, radio(10.0));
  EXPECT_EQ(compute_contacts(m, radios, 0).size(), 2u);
  EXPECT_TRUE(compute_contacts(m, radios, 1).empty());
  const auto at2 = compute_contacts(m, radios, 2);
  ASSERT_EQ(at2.size(), 1u);
  EXPECT_EQ(at2[0].from, 2u);
  EXPECT_FALSE(m.exhausted);
  for (int t = 0; t < 3; ++t) m = step_mobility(m);
  EXPECT_TRUE(m.exhausted);
  std::ofstream(dir / "bad.csv") << "t,from,to,distance\n0,0,x,3\n";
  EXPECT_THROW(load_contact_trace((dir / "bad.csv").string()), IngestionError);
  EXPECT_THROW(make_trace(2, {{0, 0, 5, 1.0}}), ConfigError);
}

TEST(Battery, HarvestCapsAtCapacity) {
  Battery b{10.0, 9.0};
  EXPECT_DOUBLE_EQ(b.harvest(5.0), 1.0);
  EXPECT_DOUBLE_EQ(b.level, 10.0);
  EXPECT_DOUBLE_EQ(b.fraction(), 1.0);
  EXPECT_TRUE(b.can_afford(10.0));
  EXPECT_FALSE(b.can_afford(10.5));
}

TEST(Transmit, DeliveredChargesBothEnds) {
  Battery s{1.0, 1.0}, r{1.0, 1.0};
  Rng rng(1);
  const auto rd = radio(10.0);
  const auto out = transmit(400, contact(1000), rd, rd, s, r, rng);
  EXPECT_EQ(out.status, TransmitStatus::delivered);
  EXPECT_EQ(out.bytes_received, 400u);
  EXPECT_DOUBLE_EQ(out.tx_joules, 400 * 1e-6);
  EXPECT_DOUBLE_EQ(out.rx_joules, 400 * 5e-7);
  EXPECT_DOUBLE_EQ(s.level, 1.0 - 400 * 1e-6);
  EXPECT_DOUBLE_EQ(r.level, 1.0 - 400 * 5e-7);
}

TEST(Transmit, OversizePacketTruncatedAndChargedForWindow) {
  Battery s{1.0, 1.0}, r{1.0, 1.0};
  Rng rng(1);
  const auto rd = radio(10.0);
  const auto out = transmit(5000, contact(1000), rd, rd, s, r, rng);
  EXPECT_EQ(out.status, TransmitStatus::truncated);
  EXPECT_EQ(out.bytes_sent, 1000u);
  EXPECT_EQ(out.bytes_received, 0u);
  EXPECT_DOUBLE_EQ(s.level, 1.0 - 1000 * 1e-6);
  EXPECT_DOUBLE_EQ(r.level, 1.0);
}

TEST(Transmit, CertainLossDropsWithoutReceiverCharge) {
  Battery s{1.0, 1.0}, r{1.0, 1.0};
  Rng rng(1);
  const auto rd = radio(10.0);
  const auto out = transmit(100, contact(1000, 1.0), rd, rd, s, r, rng);
  EXPECT_EQ(out.status, TransmitStatus::dropped);
  EXPECT_LT(s.level, 1.0);
  EXPECT_DOUBLE_EQ(r.level, 1.0);
}

TEST(Transmit, EmptySenderDoesNotAttempt) {
  Battery s{1.0, 0.0}, r{1.0, 1.0};
  Rng rng(1);
  const auto rd = radio(10.0);
  const auto out = transmit(100, contact(1000), rd, rd, s, r, rng);
  EXPECT_EQ(out.status, TransmitStatus::not_attempted);
  EXPECT_DOUBLE_EQ(s.level, 0.0);
}

TEST(Transmit, DropRateMatchesLossProbability) {
  const auto rd = radio(10.0);
  const int n = 20000;
  int dropped = 0;
  for (int i = 0; i < n; ++i) {
    Battery s{1e9, 1e9}, r{1e9, 1e9};
    Rng rng(4, Stream::link, static_cast<std::uint64_t>(i));
    dropped += transmit(10, contact(100, 0.3), rd, rd, s, r, rng).status == TransmitStatus::dropped;
  }
  EXPECT_NEAR(dropped / double(n), 0.3, 3.0 * std::sqrt(0.3 * 0.7 / n));
}

TEST(Ledger, BalancedLedgerPassesAndTamperingIsLocalised) {
  EnergyLedger led;
  led.initial = {10.0, 5.0};
  std::vector<double> lv = led.initial;
  for (Tick t = 0; t < 5; ++t) {
    lv[0] -= 0.5;
    led.record(t, 0, EnergyKind::compute, 0.5);
    lv[1] -= 0.1;
    led.record(t, 1, EnergyKind::tx, 0.1);
    lv[1] += 0.05;
    led.record(t, 1, EnergyKind::harvest, 0.05);
    led.snapshot(t, lv);
  }
  EXPECT_TRUE(energy_ledger_check(led, lv).ok);
  const auto tot = led.totals(1);
  EXPECT_NEAR(tot.tx, 0.5, 1e-12);
  EXPECT_NEAR(tot.harvest, 0.25, 1e-12);

  auto bad = led;
  for (std::size_t s = 2; s < bad.snapshots.size(); ++s) bad.snapshots[s][1] -= 0.01;
  const auto res = energy_ledger_check(bad, lv);
  EXPECT_FALSE(res.ok);
  EXPECT_EQ(res.node, 1u);
  EXPECT_EQ(res.tick, 2);

  auto off = lv;
  off[0] -= 1e-3;
  EXPECT_FALSE(energy_ledger_check(led, off).ok);
}
