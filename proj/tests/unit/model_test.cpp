#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "helpers.hpp"

using namespace nltest;

namespace {

// Central differences over every parameter; relative error in the 2-norm.
double fd_relative_error(const ModelParams& p, const std::vector<Sample>& batch, double l2) {
  const double h = 1e-5;
  const Gradient g = grad(p, batch, l2);
  ModelParams q = p;
  double num = 0.0, den_a = 0.0, den_b = 0.0;
  for (std::size_t i = 0; i < p.values.size(); ++i) {
    q.values[i] = p.values[i] + h;
    const double up = loss(q, batch, l2);
    q.values[i] = p.values[i] - h;
    const double down = loss(q, batch, l2);
    q.values[i] = p.values[i];
    const double fd = (up - down) / (2.0 * h);
    num += (fd - g.values[i]) * (fd - g.values[i]);
    den_a += fd * fd;
    den_b += g.values[i] * g.values[i];
  }
  return std::sqrt(num) / std::max({std::sqrt(den_a), std::sqrt(den_b), 1e-12});
}

ModelParams zero_params(std::size_t d, std::size_t k) {
  ModelParams p = init_params(1, linear_cfg(), d, k);
  std::fill(p.values.begin(), p.values.end(), 0.0);
  return p;
}

}  // namespace

TEST(InitParams, SameSeedIsBitIdentical) {
  const auto a = init_params(7, mlp_cfg(), 5, 3);
  const auto b = init_params(7, mlp_cfg(), 5, 3);
  EXPECT_EQ(a.values, b.values);
  EXPECT_NE(a.values, init_params(8, mlp_cfg(), 5, 3).values);
}

TEST(InitParams, LinearShape) {
  const auto p = init_params(1, linear_cfg(), 3, 2);
  EXPECT_EQ(p.shape.head_size(), 6u);
  EXPECT_EQ(p.bias().size(), 2u);
  EXPECT_EQ(p.trunk().size(), 0u);
  EXPECT_EQ(p.version, 0u);
  for (double b : p.bias()) EXPECT_EQ(b, 0.0);
}

TEST(InitParams, ScaleIsInverseRootFanIn) {
  const auto p = init_params(3, mlp_cfg(4), 9, 3);
  for (double w : p.trunk()) EXPECT_LE(std::abs(w), 1.0 / 3.0);
  for (double w : p.head()) EXPECT_LE(std::abs(w), 0.5);
}

TEST(InitParams, InvalidDimensionsRejected) {
  EXPECT_THROW(init_params(1, linear_cfg(), 0, 2), ConfigError);
  EXPECT_THROW(init_params(1, linear_cfg(), 3, 1), ConfigError);
}

TEST(InitParams, MeanOverManySeedsIsZeroWithinThreeSigma) {
  // Entries are U(-a, a) with a = 1/sqrt(3): variance a^2/3 = 1/9.
  const std::size_t seeds = 10000;
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < seeds; ++s) {
    const auto p = init_params(s, linear_cfg(), 3, 2);
    for (double w : p.head()) {
      sum += w;
      ++count;
    }
  }
  const double sigma = std::sqrt(1.0 / 9.0 / static_cast<double>(count));
  EXPECT_LT(std::abs(sum / static_cast<double>(count)), 3.0 * sigma);
}

TEST(PredictProba, ZeroParamsGiveUniform) {
  const auto p = zero_params(4, 5);
  for (double v : predict_proba(p, std::vector<double>{1, 2, 3, 4})) EXPECT_DOUBLE_EQ(v, 0.2);
}

TEST(PredictProba, EqualLogitsGiveHalf) {
  auto p = zero_params(2, 2);
  p.bias()[0] = 1.0;
  p.bias()[1] = 1.0;
  const auto q = predict_proba(p, std::vector<double>{0.3, -0.7});
  EXPECT_DOUBLE_EQ(q[0], 0.5);
  EXPECT_DOUBLE_EQ(q[1], 0.5);
}

TEST(PredictProba, NormalisedOnRandomInputsBothModes) {
  Rng rng(11);
  for (const auto& cfg : {linear_cfg(), mlp_cfg()}) {
    for (int t = 0; t < 200; ++t) {
      auto p = init_params(rng.next_u64(), cfg, 6, 4);
      for (double& v : p.values) v *= 1.0 + 20.0 * rng.uniform();
      std::vector<double> x(6);
      for (double& v : x) v = 10.0 * rng.normal();
      const auto q = predict_proba(p, x);
      double s = 0.0;
      for (double v : q) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        s += v;
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(PredictProba, DimensionMismatchIsShapeError) {
  const auto p = zero_params(3, 2);
  EXPECT_THROW(predict_proba(p, std::vector<double>{1, 2}), ShapeError);
}

TEST(Loss, PerfectPredictionIsNearZero) {
  auto p = zero_params(2, 3);
  p.bias()[1] = 60.0;
  const std::vector<Sample> batch{{{0.5, 0.5}, 1}, {{-1, 2}, 1}};
  EXPECT_LT(loss(p, batch), 1e-20);
}

TEST(Loss, UniformPredictionIsLogK) {
  const auto p = zero_params(3, 7);
  const std::vector<Sample> batch{{{1, 2, 3}, 0}, {{0, 0, 1}, 6}, {{4, 4, 4}, 3}};
  EXPECT_NEAR(loss(p, batch), std::log(7.0), 1e-14);
}

TEST(Loss, NonnegativeAndIncludesL2) {
  Rng rng(5);
  for (int t = 0; t < 50; ++t) {
    const auto p = init_params(rng.next_u64(), mlp_cfg(), 4, 3);
    const auto batch = random_batch(rng, 6, 4, 3);
    EXPECT_GE(loss(p, batch), 0.0);
    double sq = 0.0;
    for (double v : p.values) sq += v * v;
    EXPECT_NEAR(loss(p, batch, 0.3) - loss(p, batch), 0.3 * sq, 1e-12);
  }
}

TEST(Loss, EmptyBatchIsUsageError) {
  const auto p = zero_params(3, 2);
  EXPECT_THROW(loss(p, std::vector<Sample>{}), UsageError);
  EXPECT_THROW(grad(p, std::vector<Sample>{}), UsageError);
}

TEST(Grad, BiasGradientAtZeroIsPredictionMinusLabelMean) {
  // Two samples with opposite features: at zero params p = (1/3, 1/3, 1/3),
  // so d/db_c = mean(p_c - [y == c]) = 1/3 - (count of c)/2.
  const auto p = zero_params(2, 3);
  const std::vector<Sample> batch{{{1.0, -2.0}, 0}, {{-1.0, 2.0}, 2}};
  const Gradient g = grad(p, batch);
  const std::size_t off = p.shape.bias_offset();
  EXPECT_NEAR(g.values[off + 0], 1.0 / 3.0 - 0.5, 1e-15);
  EXPECT_NEAR(g.values[off + 1], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(g.values[off + 2], 1.0 / 3.0 - 0.5, 1e-15);
  // Symmetric features cancel in the weight gradient of the unlabelled class.
  for (std::size_t f = 0; f < 2; ++f) EXPECT_NEAR(g.values[f * 3 + 1], 0.0, 1e-15);
}

TEST(Grad, MatchesFiniteDifferencesLinear) {
  Rng rng(21);
  for (int t = 0; t < 100; ++t) {
    auto p = init_params(rng.next_u64(), linear_cfg(), 5, 4);
    for (double& v : p.bias()) v = rng.normal();
    const auto batch = random_batch(rng, 5, 5, 4);
    EXPECT_LT(fd_relative_error(p, batch, t % 2 ? 0.01 : 0.0), 1e-5);
  }
}

TEST(Grad, MatchesFiniteDifferencesMlp) {
  Rng rng(22);
  for (int t = 0; t < 100; ++t) {
    auto p = init_params(rng.next_u64(), mlp_cfg(6), 5, 4);
    for (double& v : p.bias()) v = rng.normal();
    const auto batch = random_batch(rng, 5, 5, 4);
    EXPECT_LT(fd_relative_error(p, batch, t % 2 ? 0.01 : 0.0), 1e-5);
  }
}

TEST(Grad, DuplicatedBatchLeavesMeanGradientUnchanged) {
  Rng rng(3);
  const auto p = init_params(9, mlp_cfg(), 4, 3);
  auto batch = random_batch(rng, 7, 4, 3);
  const Gradient a = grad(p, batch);
  auto doubled = batch;
  doubled.insert(doubled.end(), batch.begin(), batch.end());
  const Gradient b = grad(p, doubled);
  for (std::size_t i = 0; i < a.values.size(); ++i) EXPECT_NEAR(a.values[i], b.values[i], 1e-15);
}

TEST(LocalStep, ZeroGateIsIdentityAndSkips) {
  NodeState n = make_node(0, init_params(1, linear_cfg(), 3, 2));
  n.context.energy_fraction = 0.0;
  const auto before = n.params;
  Rng rng(2);
  const auto batch = random_batch(rng, 4, 3, 2);
  const auto out = local_step(n, batch, linear_cfg(), StepPolicy{});
  EXPECT_FALSE(out.stepped);
  EXPECT_EQ(out.reason, SkipReason::zero_gate);
  EXPECT_EQ(n.params.values, before.values);
  EXPECT_EQ(n.params.version, before.version);
  EXPECT_EQ(n.skipped_updates, 1u);
}

TEST(LocalStep, UnitGateIsPlainSgd) {
  NodeState n = make_node(0, init_params(1, mlp_cfg(), 3, 2));
  n.context.energy_fraction = 1.0;
  n.context.salience = 2.0;
  Rng rng(2);
  const auto batch = random_batch(rng, 4, 3, 2);
  const Gradient g = grad(n.params, batch);
  const auto before = n.params.values;
  const double level = n.battery.level;
  const auto out = local_step(n, batch, mlp_cfg(6, 0.1), StepPolicy{1e-3, true});
  ASSERT_TRUE(out.stepped);
  EXPECT_EQ(out.omega, 1.0);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(n.params.values[i], before[i] - 0.1 * g.values[i]);
  EXPECT_EQ(n.params.version, 1u);
  EXPECT_EQ(n.updates, 1u);
  EXPECT_DOUBLE_EQ(n.battery.level, level - 1e-3);
}

TEST(LocalStep, GateScalesLearningRate) {
  NodeState n = make_node(0, init_params(1, linear_cfg(), 3, 2));
  n.context.energy_fraction = 0.5;
  n.context.salience = 0.6;
  Rng rng(4);
  const auto batch = random_batch(rng, 4, 3, 2);
  const Gradient g = grad(n.params, batch);
  const auto before = n.params.values;
  const auto out = local_step(n, batch, linear_cfg(0.1), StepPolicy{});
  EXPECT_DOUBLE_EQ(out.omega, 0.3);
  for (std::size_t i = 0; i < before.size(); ++i)
    EXPECT_EQ(n.params.values[i], before[i] - (0.1 * 0.3) * g.values[i]);
}

TEST(LocalStep, InsufficientEnergySkips) {
  NodeState n = make_node(0, init_params(1, linear_cfg(), 3, 2));
  n.battery = Battery{1.0, 5e-4};
  n.context.energy_fraction = 5e-4;
  Rng rng(4);
  const auto out = local_step(n, random_batch(rng, 2, 3, 2), linear_cfg(), StepPolicy{1e-3, true});
  EXPECT_FALSE(out.stepped);
  EXPECT_EQ(out.reason, SkipReason::insufficient_energy);
  EXPECT_EQ(n.battery.level, 5e-4);
}

TEST(LocalStep, TrajectoryIsDeterministic) {
  auto run = [] {
    NodeState n = make_node(0, init_params(5, mlp_cfg(), 4, 3));
    for (std::uint64_t t = 0; t < 20; ++t) {
      Rng rng(9, Stream::data, 0, t);
      local_step(n, random_batch(rng, 8, 4, 3), mlp_cfg(), StepPolicy{});
    }
    return n.params.values;
  };
  EXPECT_EQ(run(), run());
}

TEST(LocalStep, VersionIncreasesOnEveryStep) {
  NodeState n = make_node(0, init_params(5, linear_cfg(), 4, 3));
  Rng rng(1);
  for (std::uint64_t t = 1; t <= 10; ++t) {
    local_step(n, random_batch(rng, 3, 4, 3), linear_cfg(), StepPolicy{});
    EXPECT_EQ(n.params.version, t);
    EXPECT_TRUE(all_finite(n.params.values));
  }
}

TEST(Accuracy, MemorisedSetIsOne) {
  auto p = zero_params(4, 4);
  for (std::size_t c = 0; c < 4; ++c) p.head()[c * 4 + c] = 1.0;  // identity map
  std::vector<Sample> test;
  for (std::size_t i = 0; i < 10; ++i) {
    Sample s;
    s.y = i % 4;
    s.x.assign(4, 0.0);
    s.x[s.y] = 1.0 + static_cast<double>(i);
    test.push_back(s);
  }
  EXPECT_EQ(evaluate_accuracy(p, test), 1.0);
}

TEST(Accuracy, RandomParamsNearChanceWithinBinomialBound) {
  const std::size_t k = 4, n = 20000;
  Rng rng(77);
  const auto p = init_params(3, linear_cfg(), 6, k);
  // Labels independent of features: correctness is Bernoulli(1/k).
  const auto test = random_batch(rng, n, 6, k);
  const double acc = evaluate_accuracy(p, test);
  const double sigma = std::sqrt(0.25 * 0.75 / static_cast<double>(n));
  EXPECT_NEAR(acc, 0.25, 3.0 * sigma);
}

TEST(Accuracy, DuplicationInvariantAndTiesToLowestClass) {
  Rng rng(1);
  const auto p = init_params(3, mlp_cfg(), 3, 3);
  auto test = random_batch(rng, 50, 3, 3);
  const double a = evaluate_accuracy(p, test);
  auto twice = test;
  twice.insert(twice.end(), test.begin(), test.end());
  EXPECT_EQ(evaluate_accuracy(p, twice), a);

  const auto z = zero_params(3, 3);
  EXPECT_EQ(predict(z, std::vector<double>{1, 2, 3}), 0u);
  EXPECT_EQ(evaluate_accuracy(z, std::vector<Sample>{{{1, 1, 1}, 0}, {{1, 1, 1}, 1}}), 0.5);
  EXPECT_THROW(evaluate_accuracy(z, std::vector<Sample>{}), UsageError);
}

TEST(Properties, FullBatchDescentIsMonotoneOnSeparableToy) {
  std::vector<Sample> batch;
  Rng rng(8);
  for (int i = 0; i < 40; ++i) {
    const std::size_t y = static_cast<std::size_t>(i % 2);
    batch.push_back({{(y ? 2.0 : -2.0) + 0.3 * rng.normal(), 0.3 * rng.normal()}, y});
  }
  auto p = init_params(4, linear_cfg(), 2, 2);
  double prev = loss(p, batch);
  for (int step = 0; step < 100; ++step) {
    apply_gradient(p, grad(p, batch), 0.01);
    const double cur = loss(p, batch);
    EXPECT_LE(cur, prev);
    prev = cur;
  }
}
