#include "helpers.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

using namespace sacn;
using sacn::testing::random_matrix;

TEST(FeatureMask, ZeroRateLeavesFeatures) {
  std::mt19937_64 rng(0);
  const auto x = random_matrix(5, 8, rng);
  const auto [masked, plan] = feature_mask(x, 0.0, rng);
  EXPECT_TRUE(masked == x);
  EXPECT_TRUE(plan.masked_dims.empty());
}

TEST(FeatureMask, FullRateZeroesEverything) {
  std::mt19937_64 rng(1);
  const auto x = random_matrix(5, 8, rng);
  const auto [masked, plan] = feature_mask(x, 1.0, rng);
  EXPECT_TRUE(masked.isZero(0.0));
  EXPECT_EQ(plan.masked_dims.size(), 8u);
}

TEST(FeatureMask, ExactCountAndUntouchedColumns) {
  std::mt19937_64 rng(2);
  const auto x = random_matrix(4, 1000, rng);
  const auto [masked, plan] = feature_mask(x, 0.3, rng);
  ASSERT_EQ(plan.masked_dims.size(), 300u);
  EXPECT_TRUE(std::is_sorted(plan.masked_dims.begin(), plan.masked_dims.end()));
  std::vector<char> is_masked(1000, 0);
  for (Index d : plan.masked_dims) is_masked[d] = 1;
  for (Index d = 0; d < 1000; ++d) {
    if (is_masked[d]) {
      EXPECT_TRUE(masked.col(d).isZero(0.0));
    } else {
      EXPECT_TRUE(masked.col(d) == x.col(d));
    }
  }
}

TEST(FeatureMask, IndependentDrawsOverlapHypergeometrically) {
  // Two independent 300-of-1000 draws share 90 columns on average, with
  // variance 300 * 0.3 * 0.7 * 700 / 999.
  const double mean = 90.0;
  const double sd = std::sqrt(300.0 * 0.3 * 0.7 * 700.0 / 999.0);
  double total = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 a(2 * seed), b(2 * seed + 1);
    const auto p1 = draw_mask_plan(1000, 0.3, a);
    const auto p2 = draw_mask_plan(1000, 0.3, b);
    std::vector<Index> common;
    std::set_intersection(p1.masked_dims.begin(), p1.masked_dims.end(), p2.masked_dims.begin(),
                          p2.masked_dims.end(), std::back_inserter(common));
    const double overlap = static_cast<double>(common.size());
    EXPECT_NEAR(overlap, mean, 4.0 * sd) << seed;
    total += overlap;
  }
  EXPECT_NEAR(total / 100.0, mean, 3.0 * sd / 10.0);
}

TEST(FeatureMask, DeterministicAndReplayable) {
  std::mt19937_64 a(7), b(7);
  const auto p1 = draw_mask_plan(50, 0.4, a);
  const auto p2 = draw_mask_plan(50, 0.4, b);
  EXPECT_EQ(p1.masked_dims, p2.masked_dims);
  EXPECT_EQ(p1.seed, p2.seed);
  // Independent streams give different plans.
  std::mt19937_64 c(8);
  EXPECT_NE(draw_mask_plan(50, 0.4, c).masked_dims, p1.masked_dims);
}

TEST(FeatureMask, RoundsTheCount) {
  std::mt19937_64 rng(3);
  EXPECT_EQ(draw_mask_plan(10, 0.25, rng).masked_dims.size(), 3u);  // 2.5 rounds away from zero
  EXPECT_EQ(draw_mask_plan(7, 0.3, rng).masked_dims.size(), 2u);
  EXPECT_THROW(draw_mask_plan(7, -0.1, rng), std::invalid_argument);
  EXPECT_THROW(draw_mask_plan(7, 1.1, rng), std::invalid_argument);
}
