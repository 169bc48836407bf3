#include <gtest/gtest.h>

#include <set>

#include "adapam/ndmath.hpp"
#include "adapam/replay.hpp"
#include "adapam/rng.hpp"
#include "adapam/stats.hpp"

using namespace adapam;

TEST(Rng, SameSeedSameStream) {
  Rng a(5), b(5), c(6);
  for (int i = 0; i < 100; ++i) {
    auto x = a.bits();
    EXPECT_EQ(x, b.bits());
    EXPECT_NE(x, c.bits());
  }
}

TEST(Rng, RangesAndCategorical) {
  Rng r(1);
  std::vector<int> counts(3, 0);
  Vec probs{0.2, 0.0, 0.8};
  for (int i = 0; i < 20000; ++i) {
    double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.index(7), 7u);
    ++counts[r.categorical(probs)];
  }
  EXPECT_EQ(counts[1], 0);
  EXPECT_NEAR(counts[0] / 20000.0, 0.2, 0.015);
}

TEST(Rng, DerivedSeedsAreDistinct) {
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 50; ++a)
    for (std::uint64_t b = 0; b < 50; ++b) seen.insert(derive_seed(7, a, b));
  EXPECT_EQ(seen.size(), 2500u);
  EXPECT_EQ(derive_seed(7, 1, 2), derive_seed(7, 1, 2));
}

TEST(Stats, MeanStderrQuantile) {
  Vec xs{3, 1, 4, 1, 5, 9, 2, 6};
  EXPECT_DOUBLE_EQ(stats::mean(xs), 3.875);
  // Reference: linear-interpolation percentiles of the same sample.
  EXPECT_NEAR(stats::quantile(xs, 0.05), 1.0, 1e-12);
  EXPECT_NEAR(stats::quantile(xs, 0.5), 3.5, 1e-12);
  EXPECT_NEAR(stats::quantile(xs, 0.9), 6.9, 1e-12);
  EXPECT_THROW(stats::quantile({}, 0.5), ArgumentError);
}

TEST(Stats, OneSidedTTestMatchesReference) {
  // Reference p-values from the Student t survival function.
  EXPECT_NEAR(stats::one_sided_p_greater(Vec{1, 2, 3, 4}), 0.015233145831085489, 1e-12);
  EXPECT_NEAR(stats::one_sided_p_greater(Vec{0.5, -0.2, 0.9, 0.3, 0.1}), 0.07977642634919695, 1e-12);
  EXPECT_NEAR(stats::ci95_halfwidth(Vec{0.5, -0.2, 0.9, 0.3, 0.1}), 0.5149538535858165, 1e-12);
  EXPECT_EQ(stats::one_sided_p_greater(Vec{2, 2, 2}), 0.0);
  EXPECT_EQ(stats::one_sided_p_greater(Vec{1}), 1.0);
}

TEST(RingBuffer, EvictsOldestFirst) {
  RingBuffer<int> rb(3);
  for (int i = 0; i < 5; ++i) rb.push(i);
  EXPECT_EQ(rb.size(), 3u);
  EXPECT_EQ(rb[0], 2);
  EXPECT_EQ(rb[2], 4);
  Rng r(3);
  for (auto i : rb.sample(r, 50)) EXPECT_LT(i, 3u);
  EXPECT_THROW(RingBuffer<int>(0), ConfigError);
}
