#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace nltest;

namespace {

std::vector<Sample> samples(std::size_t n, std::size_t d) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back({std::vector<double>(d, double(i)), i % 2});
  return out;
}

RadioProfile lossless() {
  RadioProfile r;
  r.base_loss = 0.0;
  r.tx_energy = 1e-6;
  r.rx_energy = 1e-6;
  return r;
}

}  // namespace

TEST(Capacity, BuiltinProfiles) {
  EXPECT_EQ(builtin_capacity("mcu")->memory_bytes, 256'000u);
  EXPECT_EQ(builtin_capacity("edge-server")->hardware, HardwareClass::edge_server);
  EXPECT_FALSE(builtin_capacity("mainframe"));
  EXPECT_THROW(parse_hardware_class("gpu"), ConfigError);
}

TEST(EffectiveCapacity, Examples) {
  std::vector<MemoryStatus> mem(16, MemoryStatus{2'000'000, 0});
  EXPECT_EQ(effective_capacity(0, {}, mem), 2'000'000u);
  std::vector<NodeId> all;
  for (NodeId j = 1; j < 16; ++j) all.push_back(j);
  EXPECT_EQ(effective_capacity(0, all, mem), 32'000'000u);
  mem[3].used = 2'000'000;
  EXPECT_EQ(effective_capacity(0, all, mem), 30'000'000u);
  mem[4].used = 5'000'000;  // over-full contributes nothing, never negative
  EXPECT_EQ(effective_capacity(0, all, mem), 28'000'000u);
}

TEST(EffectiveCapacity, MonotoneInNeighbourSet) {
  Rng rng(6);
  std::vector<MemoryStatus> mem;
  for (int i = 0; i < 12; ++i) {
    const auto cap = rng.below(1000);
    mem.push_back({cap, rng.below(1200)});
  }
  std::vector<NodeId> nb;
  auto prev = effective_capacity(0, nb, mem);
  for (NodeId j = 1; j < 12; ++j) {
    nb.push_back(j);
    const auto now = effective_capacity(0, nb, mem);
    EXPECT_GE(now, prev);
    prev = now;
  }
}

TEST(EffectiveCapacity, DiscountedVariant) {
  std::vector<MemoryStatus> mem{{100, 0}, {100, 0}, {100, 50}};
  const std::vector<NodeId> nb{1, 2};
  const std::vector<double> loss{0.5, 0.0};
  EXPECT_DOUBLE_EQ(effective_capacity_discounted(0, nb, loss, mem), 100 + 50 + 50);
}

TEST(Offload, RoundTripWithinContact) {
  OffloadStore st;
  const auto e = samples(5, 3);
  const auto out = offload_replay(st, 0, 1, e, 10, 5, 10'000, true);
  EXPECT_EQ(out.accepted, 5u);
  EXPECT_EQ(out.bytes, 5 * 32u);
  EXPECT_EQ(st.hosted_bytes(1), 160u);
  EXPECT_EQ(st.offloaded_bytes(0), 160u);
  const auto back = retrieve_replay(st, 0, 1, 12, true);
  EXPECT_FALSE(back.stale);
  ASSERT_EQ(back.entries.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(back.entries[i].x, e[i].x);
}

TEST(Offload, PartialAcceptanceAndFullHost) {
  OffloadStore st;
  const auto e = samples(5, 3);
  EXPECT_EQ(offload_replay(st, 0, 1, e, 0, 5, 0, true).accepted, 0u);
  EXPECT_TRUE(st.leases.empty());
  const auto part = offload_replay(st, 0, 1, e, 0, 5, 100, true);
  EXPECT_EQ(part.accepted, 3u);
  EXPECT_LE(st.hosted_bytes(1), 100u);
  EXPECT_EQ(offload_replay(st, 0, 2, e, 0, 5, 1000, false).accepted, 0u);
}

TEST(Offload, ExpiryYieldsEmptyStaleRetrieval) {
  OffloadStore st;
  offload_replay(st, 0, 1, samples(2, 2), 0, 3, 1000, true);
  EXPECT_EQ(retrieve_replay(st, 0, 1, 3, true).entries.size(), 2u);
  const auto late = retrieve_replay(st, 0, 1, 4, true);
  EXPECT_TRUE(late.entries.empty());
  EXPECT_TRUE(late.stale);
  EXPECT_FALSE(retrieve_replay(st, 0, 1, 5, true).stale);
}

TEST(Offload, LostContactDropsLease) {
  OffloadStore st;
  offload_replay(st, 0, 1, samples(2, 2), 0, 100, 1000, true);
  EXPECT_EQ(expire_leases(st, 1, [](NodeId, NodeId) { return false; }), 1u);
  EXPECT_TRUE(retrieve_replay(st, 0, 1, 2, true).stale);
}

TEST(Relay, LosslessPathDelivers) {
  const auto r = lossless();
  Battery a{1, 1}, b{1, 1}, c{1, 1};
  Rng rng(1);
  const ContactEvent h1{0, 0, 1, 1.0, 0.0, 1000}, h2{0, 1, 2, 1.0, 0.0, 1000};
  const auto out = relay_forward(100, h1, h2, r, r, r, a, b, c, rng);
  EXPECT_TRUE(out.delivered);
  EXPECT_DOUBLE_EQ(a.level, 1 - 1e-4);
  EXPECT_DOUBLE_EQ(b.level, 1 - 2e-4);
  EXPECT_DOUBLE_EQ(c.level, 1 - 1e-4);
}

TEST(Relay, OnlyPathBetweenOutOfRangeNodes) {
  // 0 and 2 are 20 m apart with 12 m radios; 1 sits in the middle.
  const auto m = make_static({{0, 0}, {10, 0}, {20, 0}});
  auto r = lossless();
  r.range = 12.0;
  const std::vector<RadioProfile> radios(3, r);
  const auto ev = compute_contacts(m, radios, 0);
  auto find = [&](NodeId a, NodeId b) {
    return std::find_if(ev.begin(), ev.end(), [&](const auto& e) { return e.from == a && e.to == b; });
  };
  EXPECT_EQ(find(0, 2), ev.end());
  ASSERT_NE(find(0, 1), ev.end());
  ASSERT_NE(find(1, 2), ev.end());
  Battery a{1, 1}, b{1, 1}, c{1, 1};
  Rng rng(1);
  EXPECT_TRUE(relay_forward(50, *find(0, 1), *find(1, 2), r, r, r, a, b, c, rng).delivered);
}

TEST(Relay, FailureOnEitherHopLosesPacket) {
  const auto r = lossless();
  Rng rng(1);
  Battery a{1, 1}, b{1, 1}, c{1, 1};
  const ContactEvent ok{0, 0, 1, 1.0, 0.0, 1000}, lossy{0, 1, 2, 1.0, 1.0, 1000};
  const auto out = relay_forward(100, ok, lossy, r, r, r, a, b, c, rng);
  EXPECT_TRUE(out.attempted);
  EXPECT_FALSE(out.delivered);
  EXPECT_EQ(out.second.status, TransmitStatus::dropped);
  EXPECT_DOUBLE_EQ(c.level, 1.0);

  Battery poor{1, 1e-5};
  const ContactEvent ok2{0, 1, 2, 1.0, 0.0, 1000};
  const auto skip = relay_forward(100, ok, ok2, r, r, r, a, poor, c, rng);
  EXPECT_FALSE(skip.attempted);
  EXPECT_THROW(relay_forward(100, ok, ContactEvent{0, 2, 0, 1, 0, 10}, r, r, r, a, b, c, rng), UsageError);
}

TEST(Roles, Examples) {
  Cluster c;
  c.members = {0, 1, 2};
  const std::vector<double> equal{0.8, 0.8, 0.8};
  EXPECT_EQ(*rotate_roles(c, equal).coordinator, 0u);
  const std::vector<double> low{0.05, 0.9, 0.5};
  const auto d = rotate_roles(c, low);
  EXPECT_EQ(d.sleeping, std::vector<NodeId>{0});
  EXPECT_EQ(*d.coordinator, 1u);
  const std::vector<double> dead{0.01, 0.02, 0.0};
  EXPECT_TRUE(rotate_roles(c, dead).idle);
}

TEST(Roles, CoordinatorAlternatesUnderDutyDrain) {
  // Oracle trace: duty drains the coordinator by 0.1 per tick, so with two
  // members starting equal the role must alternate every tick.
  Cluster c;
  c.members = {0, 1};
  std::vector<double> e{1.0, 1.0};
  std::vector<NodeId> seen;
  for (int t = 0; t < 8; ++t) {
    const NodeId k = *rotate_roles(c, e, 0.0).coordinator;
    seen.push_back(k);
    e[k] -= 0.1;
  }
  EXPECT_EQ(seen, (std::vector<NodeId>{0, 1, 0, 1, 0, 1, 0, 1}));
}
