#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "adapam/envs.hpp"
#include "adapam/perturber.hpp"
#include "support.hpp"

using namespace adapam;
using namespace adapam::testing;

namespace {

/// Single linear layer with identity weights: logits equal the observation.
Network identity_net(std::size_t d) {
  Network n = Network::create(MlpSpec{{d, d}, Activation::tanh}, 1);
  n.params.at(0).data.assign(d * d, 0.0);
  for (std::size_t i = 0; i < d; ++i) n.params.at(0).data[i * d + i] = 1.0;
  n.params.at(1).data.assign(d, 0.0);
  return n;
}

}  // namespace

TEST(Distances, HandExamples) {
  EXPECT_DOUBLE_EQ(linf_distance(Vec{0.0, 0.0}, Vec{0.1, -0.3}), 0.3);
  EXPECT_NEAR(l2_distance(Vec{0.0, 0.0}, Vec{0.1, -0.3}), 0.31622776601683794, 1e-15);
  EXPECT_THROW(linf_distance(Vec{0.0}, Vec{0.0, 1.0}), ShapeError);
}

TEST(MarginF, HandExamples) {
  Vec z{2.0, 5.0, 3.0};
  EXPECT_EQ(margin_f(z, 1), 0.0);
  EXPECT_DOUBLE_EQ(margin_f(z, 0), 3.0);
  EXPECT_DOUBLE_EQ(margin_f(z, 2, 0.5), 2.5);
  EXPECT_EQ(margin_f(z, 1, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(margin_f(z, 1, 4.0), 2.0);
  EXPECT_THROW(margin_f(z, 3), ArgumentError);
  EXPECT_THROW(margin_f(Vec{1.0}, 0), ArgumentError);
}

TEST(Budget, ApplyNeverExceedsEpsilonAfterRounding) {
  PerturbBudget b;
  EXPECT_GT((0.1 + 0.3) - 0.1, 0.3);  // the rounding case being guarded
  EXPECT_LE(b.apply(0.1, 0.3) - 0.1, 0.3);
  EXPECT_EQ(b.apply(0.9, 0.3), 1.0);
  EXPECT_EQ(b.apply(-0.2, -0.1), -0.30000000000000004);
  Rng rng(3);
  for (int k = 0; k < 100000; ++k) {
    double clean = rng.uniform(-1.0, 1.0);
    double x = b.apply(clean, rng.uniform() < 0.5 ? 0.3 : -0.3);
    ASSERT_LE(std::abs(x - clean), 0.3);
    ASSERT_GE(x, -1.0);
    ASSERT_LE(x, 1.0);
  }
}

TEST(CwAttack, PropertyStaysInsideBudgetAndBox) {
  Rng rng(21);
  PerturbBudget budget;
  CwConfig cfg;
  cfg.max_iters = 60;
  for (int k = 0; k < 60; ++k) {
    Network net = Network::create(small_spec(6, 4), rng.bits());
    Vec obs = random_vec(rng, 6);
    if (k % 5 == 0) obs[0] = 1.0;  // on the box edge
    std::size_t target = rng.index(4);
    PerturbResult r = cw_attack(net, obs, target, budget, cfg);
    EXPECT_LE(linf_distance(obs, r.perturbed), budget.epsilon);
    for (double x : r.perturbed) {
      EXPECT_GE(x, kObsLow);
      EXPECT_LE(x, kObsHigh);
    }
    EXPECT_DOUBLE_EQ(r.linf, linf_distance(obs, r.perturbed));
    EXPECT_DOUBLE_EQ(r.l2, l2_distance(obs, r.perturbed));
    EXPECT_EQ(r.success_on_proxy, argmax(net.forward(r.perturbed)) == target);
  }
}

TEST(CwAttack, ReachesFeasibleTargetWithSmallPerturbation) {
  Network net = identity_net(2);
  Vec obs{0.1, 0.0};
  PerturbResult r = cw_attack(net, obs, 1, PerturbBudget{}, CwConfig{});
  EXPECT_TRUE(r.success_on_proxy);
  EXPECT_EQ(r.margin, 0.0);
  // The smallest L2 move that ties the logits is 0.1 / sqrt(2).
  EXPECT_GE(r.l2, 0.1 / std::sqrt(2.0) - 1e-12);
  EXPECT_LT(r.l2, 0.15);
  EXPECT_LT(r.iters_used, CwConfig{}.max_iters);
}

TEST(CwAttack, InfeasibleTargetFailsHonestly) {
  Network net = identity_net(2);
  Vec obs{1.0, -1.0};
  CwConfig cfg;
  cfg.record_trace = true;
  cfg.max_iters = 200;
  PerturbResult r = cw_attack(net, obs, 1, PerturbBudget{}, cfg);
  EXPECT_FALSE(r.success_on_proxy);
  EXPECT_GT(r.margin, 0.0);
  EXPECT_NEAR(r.margin, 1.4, 1e-9);  // both coordinates pinned at the budget
  EXPECT_LE(r.linf, 0.3);
  EXPECT_EQ(r.trace.size(), cfg.max_iters + 1);
}

TEST(CwAttack, ReturnsBestIterateOfTrace) {
  Rng rng(5);
  CwConfig cfg;
  cfg.record_trace = true;
  cfg.early_stop = false;
  cfg.max_iters = 80;
  cfg.step_size = 0.05;  // large steps make the trace non-monotone
  for (int k = 0; k < 20; ++k) {
    Network net = Network::create(small_spec(5, 3), rng.bits());
    Vec obs = random_vec(rng, 5);
    PerturbResult r = cw_attack(net, obs, rng.index(3), PerturbBudget{}, cfg);
    double best = INFINITY;
    for (const auto& p : r.trace) best = std::min(best, p.f);
    EXPECT_EQ(r.margin, best);
  }
}

TEST(CwAttack, TrivialCasesReturnTheOriginal) {
  Network net = identity_net(3);
  Vec obs{0.2, 0.5, -0.1};
  PerturbResult already = cw_attack(net, obs, 1, PerturbBudget{}, CwConfig{});
  EXPECT_EQ(already.perturbed, obs);
  EXPECT_TRUE(already.success_on_proxy);
  EXPECT_EQ(already.iters_used, 0u);

  PerturbResult zero = cw_attack(net, obs, 0, PerturbBudget{0.0}, CwConfig{});
  EXPECT_EQ(zero.perturbed, obs);
  EXPECT_FALSE(zero.success_on_proxy);
  EXPECT_EQ(zero.linf, 0.0);
}

TEST(CwAttack, DeterministicAndValidated) {
  Network net = Network::create(small_spec(4, 3), 3);
  Vec obs{0.1, -0.2, 0.3, 0.0};
  PerturbResult a = cw_attack(net, obs, 2, PerturbBudget{}, CwConfig{});
  PerturbResult b = cw_attack(net, obs, 2, PerturbBudget{}, CwConfig{});
  EXPECT_EQ(a.perturbed, b.perturbed);
  EXPECT_THROW(cw_attack(net, obs, 3, PerturbBudget{}, CwConfig{}), ArgumentError);
  EXPECT_THROW(cw_attack(net, Vec{0.0}, 0, PerturbBudget{}, CwConfig{}), ShapeError);
  EXPECT_THROW(cw_attack(net, obs, 0, PerturbBudget{1.5}, CwConfig{}), ConfigError);
  CwConfig bad;
  bad.c = 0.0;
  EXPECT_THROW(cw_attack(net, obs, 0, PerturbBudget{}, bad), ConfigError);
}

TEST(Verify, QueriesTheGivenPolicy) {
  PolicyQuery always_two = [](std::span<const double>) { return std::size_t{2}; };
  EXPECT_TRUE(verify(always_two, Vec{0.0}, 2));
  EXPECT_FALSE(verify(always_two, Vec{0.0}, 1));
}
