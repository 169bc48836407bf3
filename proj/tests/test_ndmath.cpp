#include <gtest/gtest.h>

#include <cmath>

#include "adapam/ndmath.hpp"
#include "support.hpp"

using namespace adapam;
using namespace adapam::testing;

TEST(Softmax, MatchesReferenceValues) {
  // Reference computed independently in float64 with max-shifted exponentials.
  Vec p = softmax(Vec{1.0, 2.0, 3.0});
  EXPECT_NEAR(p[0], 0.09003057317038046, 1e-15);
  EXPECT_NEAR(p[1], 0.24472847105479764, 1e-15);
  EXPECT_NEAR(p[2], 0.6652409557748218, 1e-15);
  Vec lp = log_softmax(Vec{1.0, 2.0, 3.0});
  EXPECT_NEAR(lp[0], -2.4076059644443806, 1e-14);
  EXPECT_NEAR(lp[2], -0.4076059644443806, 1e-14);
}

TEST(Softmax, StableForLargeLogitsAndRejectsEmpty) {
  Vec p = softmax(Vec{1000.0, 1000.0});
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_THROW(softmax(Vec{}), ShapeError);
  EXPECT_THROW(softmax(Array::zeros({2, 2})), ShapeError);
}

TEST(Softmax, PropertySumsToOneAndIsShiftInvariant) {
  Rng rng(11);
  for (int k = 0; k < 200; ++k) {
    Vec z = random_vec(rng, 1 + rng.index(9), -30.0, 30.0);
    Vec p = softmax(z);
    double s = 0.0;
    for (double v : p) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
    Vec shifted = z;
    double c = rng.uniform(-50.0, 50.0);
    for (auto& v : shifted) v += c;
    Vec q = softmax(shifted);
    for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-12);
  }
}

TEST(Argmax, LowestIndexWinsTies) {
  EXPECT_EQ(argmax(Vec{1.0, 3.0, 3.0}), 1u);
  EXPECT_EQ(argmin(Vec{2.0, 0.0, 0.0}), 1u);
}

TEST(Heads, ClosedFormValues) {
  Vec z{1.0, 2.0, 3.0};
  EXPECT_NEAR(evaluate_head(CrossEntropyHead{0}, z, {}).loss, 2.40760596444438, 1e-12);
  EXPECT_NEAR(evaluate_head(BinaryCrossEntropyHead{1.0}, Vec{0.3}, {}).loss, 0.5543552444685271, 1e-14);
  EXPECT_NEAR(evaluate_head(BinaryCrossEntropyHead{0.0}, Vec{0.3}, {}).loss, 0.8543552444685272, 1e-14);
  EXPECT_DOUBLE_EQ(evaluate_head(MseHead{2, 1.0}, z, {}).loss, 2.0);
  // Equal expert/proxy logits of zero give the chance-level loss 2 ln 2.
  double both = evaluate_head(BinaryCrossEntropyHead{1.0}, Vec{0.0}, {}).loss +
                evaluate_head(BinaryCrossEntropyHead{0.0}, Vec{0.0}, {}).loss;
  EXPECT_NEAR(both, 1.3862943611198906, 1e-15);
}

TEST(Heads, IndexOutOfRangeIsRejected) {
  EXPECT_THROW(evaluate_head(CrossEntropyHead{3}, Vec{1, 2, 3}, {}), ConfigError);
  EXPECT_THROW(evaluate_head(BinaryCrossEntropyHead{1.0}, Vec{1, 2}, {}), ConfigError);
}

namespace {

void check_head_gradients(const LossHead& head, std::size_t in, std::size_t out, std::uint64_t seed,
                          Activation act = Activation::tanh) {
  Rng rng(seed);
  MlpSpec spec = small_spec(in, out, act);
  int failures = 0;
  for (int probe = 0; probe < 100; ++probe) {
    Network net = Network::create(spec, rng.bits());
    Array x = Array::vector(random_vec(rng, in));
    GradResult g = grad(net.params, spec, x, head);
    auto loss = [&] { return grad(net.params, spec, x, head, false).loss; };
    double analytic, numeric;
    if (probe % 2 == 0) {
      auto [e, k] = random_coordinate(net.params, rng);
      analytic = g.d_params.at(e).data[k];
      numeric = central_difference(net.params.at(e).data[k], loss);
    } else {
      std::size_t k = rng.index(in);
      analytic = g.d_input.data[k];
      numeric = central_difference(x.data[k], loss);
    }
    if (rel_error(analytic, numeric) > kFdTolerance) ++failures;
  }
  EXPECT_EQ(failures, 0);
}

}  // namespace

TEST(Gradients, CrossEntropy) { check_head_gradients(CrossEntropyHead{2}, 5, 4, 1); }
TEST(Gradients, BinaryCrossEntropy) { check_head_gradients(BinaryCrossEntropyHead{1.0}, 6, 1, 2); }
TEST(Gradients, Mse) { check_head_gradients(MseHead{1, 0.7}, 5, 3, 3); }
TEST(Gradients, WeightedLogProbWithEntropy) { check_head_gradients(WeightedLogProbHead{0, -1.3, 0.2}, 4, 5, 4); }
TEST(Gradients, ReluNetwork) { check_head_gradients(CrossEntropyHead{0}, 5, 3, 5, Activation::relu); }

TEST(Gradients, CwObjectiveIncludesDistanceTerm) {
  Rng rng(6);
  Vec original = random_vec(rng, 6);
  check_head_gradients(CwObjectiveHead{original, 3, 2.5, 0.5}, 6, 4, 7);
}

TEST(Mlp, ShapeErrors) {
  MlpSpec spec = small_spec(3, 2);
  Network net = Network::create(spec, 1);
  EXPECT_THROW(net.forward(Vec{1.0, 2.0}), ShapeError);
  MlpSpec other = small_spec(4, 2);
  EXPECT_THROW(mlp_forward(net.params, other, Array::vector(Vec(4, 0.0))), ShapeError);
  EXPECT_THROW((MlpSpec{{3}, Activation::tanh}.validate()), ConfigError);
}

TEST(Mlp, InitIsDeterministicPerSeed) {
  MlpSpec spec = small_spec(4, 3);
  EXPECT_EQ(Network::create(spec, 42), Network::create(spec, 42));
  EXPECT_FALSE(Network::create(spec, 42) == Network::create(spec, 43));
  Network net = Network::create(spec, 42);
  const auto& w = net.params.get("W0");
  double bound = std::sqrt(6.0 / 12.0);
  for (double v : w.data) EXPECT_LE(std::abs(v), bound);
}

TEST(Mlp, PureForwardLeavesParametersUntouched) {
  MlpSpec spec = small_spec(4, 3);
  Network net = Network::create(spec, 3);
  ParameterSet before = net.params;
  Array out1 = mlp_forward(net.params, spec, Array::vector(Vec{0.1, 0.2, 0.3, 0.4}));
  Array out2 = mlp_forward(net.params, spec, Array::vector(Vec{0.1, 0.2, 0.3, 0.4}));
  EXPECT_EQ(out1, out2);
  EXPECT_EQ(net.params, before);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradientSign) {
  ParameterSet p;
  p.add("w", Array::vector(Vec{1.0, -2.0, 0.5}));
  ParameterSet g;
  g.add("w", Array::vector(Vec{0.3, -4.0, 0.0}));
  auto [q, st] = adam_step(p, g, AdamState::for_params(p), 0.01);
  EXPECT_NEAR(q.get("w")[0], 0.99, 1e-9);
  EXPECT_NEAR(q.get("w")[1], -1.99, 1e-9);
  EXPECT_DOUBLE_EQ(q.get("w")[2], 0.5);
  EXPECT_EQ(st.t, 1u);
  EXPECT_EQ(p.get("w")[0], 1.0);
}

TEST(Adam, LayoutMismatchIsRejected) {
  ParameterSet p;
  p.add("w", Array::vector(Vec{1.0}));
  ParameterSet g;
  g.add("v", Array::vector(Vec{1.0}));
  EXPECT_THROW(adam_step(p, g, AdamState::for_params(p), 0.1), ShapeError);
}

TEST(Polyak, DefaultRateIsExact) {
  Rng rng(9);
  MlpSpec spec = small_spec(5, 3);
  Network online = Network::create(spec, 1), target = Network::create(spec, 2);
  ParameterSet next = polyak_update(target.params, online.params, 0.005);
  double worst = 0.0;
  for (std::size_t e = 0; e < next.size(); ++e)
    for (std::size_t k = 0; k < next.at(e).size(); ++k)
      worst = std::max(worst, std::abs(next.at(e).data[k] -
                                       (0.005 * online.params.at(e).data[k] + 0.995 * target.params.at(e).data[k])));
  EXPECT_EQ(worst, 0.0);
}

TEST(Polyak, EndpointsAndErrors) {
  MlpSpec spec = small_spec(3, 2);
  Network a = Network::create(spec, 1), b = Network::create(spec, 2);
  EXPECT_EQ(polyak_update(a.params, b.params, 1.0).at(0).data, b.params.at(0).data);
  EXPECT_EQ(polyak_update(a.params, b.params, 0.0).at(0).data, a.params.at(0).data);
  EXPECT_THROW(polyak_update(a.params, b.params, 1.5), ArgumentError);
  Network c = Network::create(small_spec(4, 2), 3);
  EXPECT_THROW(polyak_update(a.params, c.params, 0.5), ShapeError);
}

TEST(ParameterSetOps, DuplicateNamesAndScaledAdd) {
  ParameterSet p;
  p.add("a", Array::vector(Vec{1.0, 2.0}));
  EXPECT_THROW(p.add("a", Array::vector(Vec{0.0})), ArgumentError);
  ParameterSet q = p.zeros_like();
  q.fill(2.0);
  p.add_scaled(q, 0.5);
  EXPECT_EQ(p.get("a").data, (Vec{2.0, 3.0}));
  EXPECT_DOUBLE_EQ(p.max_abs(), 3.0);
  EXPECT_THROW(Array({2, 2}, Vec{1.0}), ShapeError);
}

TEST(ClipGradNorm, ScalesToBound) {
  ParameterSet g;
  g.add("w", Array::vector(Vec{3.0, 4.0}));
  clip_grad_norm(g, 1.0);
  EXPECT_NEAR(g.get("w")[0], 0.6, 1e-15);
  EXPECT_NEAR(g.get("w")[1], 0.8, 1e-15);
}
