#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "softpl/soft_scoring.hpp"

TEST(ConsensusFactor, Examples) {
  EXPECT_DOUBLE_EQ(softpl::consensus_factor(0.0, 2, 5.0, 0.1), 1.0);
  EXPECT_NEAR(softpl::consensus_factor(0.0, 3, 5.0, 0.1), 1.1, 1e-12);
  EXPECT_NEAR(softpl::consensus_factor(0.0, 1, 5.0, 0.1), 0.9, 1e-12);
  // exp(-5 * 0.2928571428571429)
  EXPECT_NEAR(softpl::consensus_factor(0.2928571428571429, 2, 5.0, 0.1), 0.23124310614803328, 1e-12);
  EXPECT_NEAR(softpl::consensus_factor(0.2928571428571429, 2, 5.0, 0.1), 0.23127, 1e-4);
}

TEST(ConsensusFactor, NonPositiveBracketRejected) {
  EXPECT_THROW(softpl::consensus_factor(0.0, 1, 5.0, 1.0), softpl::NonPositiveFactorError);
  EXPECT_THROW(softpl::consensus_factor(0.0, 0, 5.0, 0.5), softpl::NonPositiveFactorError);
  EXPECT_NO_THROW(softpl::consensus_factor(0.0, 1, 5.0, 0.99));
}

TEST(Scores, Examples) {
  EXPECT_NEAR(softpl::soft_score(0.6, 0.23124310614803328), 0.13874586368881997, 1e-12);
  EXPECT_NEAR(softpl::soft_score(0.6, 0.23124310614803328), 0.13876, 1e-4);
  EXPECT_DOUBLE_EQ(softpl::soft_score(0.95, 1.1), 1.0);
  EXPECT_DOUBLE_EQ(softpl::soft_score(0.8, 1.1), 0.8 * 1.1);
  EXPECT_DOUBLE_EQ(softpl::hard_score(0.6), 0.6);
  EXPECT_NEAR(softpl::train_weight(0.88, 2.0), 0.7744, 1e-12);
  EXPECT_DOUBLE_EQ(softpl::train_weight(0.5, 0.0), 1.0);
}

TEST(ScoringProperties, Monotonicity) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 2000; ++i) {
    const double s1 = u(rng), s2 = u(rng), a = u(rng), b = u(rng);
    const double lo = std::min(a, b), hi = std::max(a, b);
    // More spread never raises the factor; more models never lowers it.
    EXPECT_GE(softpl::consensus_factor(lo, 3, 5.0, 0.1), softpl::consensus_factor(hi, 3, 5.0, 0.1));
    EXPECT_LE(softpl::consensus_factor(lo, 2, 5.0, 0.1), softpl::consensus_factor(lo, 4, 5.0, 0.1));
    const double cf = softpl::consensus_factor(lo, 3, 5.0, 0.1);
    const double x = softpl::soft_score(s1, cf);
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
    if (s1 <= s2) EXPECT_LE(x, softpl::soft_score(s2, cf));
    const double w = softpl::train_weight(x, 2.0);
    EXPECT_GE(w, 0.0);
    EXPECT_LE(w, x + 1e-15);
  }
}

TEST(ScoreCluster, SoftAndHardModes) {
  softpl::Cluster c;
  c.image_id = 3;
  c.category_id = 2;
  c.members = {{3, 2, {0, 0, 10, 10}, 0.6, "m1"}, {3, 2, {0, 0, 20, 10}, 0.4, "m2"}};
  c.model_set = {"m1", "m2"};
  softpl::ScoringParams p;
  const auto soft = softpl::score_cluster(c, p);
  EXPECT_NEAR(soft.soft_score, 0.13876, 1e-4);
  EXPECT_NEAR(soft.train_weight, soft.soft_score * soft.soft_score, 1e-15);
  EXPECT_EQ(soft.s_base, 0.6);
  EXPECT_EQ(soft.source_models.size(), 2u);
  p.mode = softpl::ScoreMode::hard;
  const auto hard = softpl::score_cluster(c, p);
  EXPECT_EQ(hard.soft_score, 0.6);
  EXPECT_NEAR(hard.spread, soft.spread, 0.0);
  EXPECT_STREQ(softpl::to_string(softpl::ScoreMode::hard), "hard");
}
