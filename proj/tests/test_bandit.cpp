#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "verefine/bandit.hpp"

using namespace verefine;

TEST(Bandit, DefaultConstants) {
  const BanditConfig c;
  EXPECT_DOUBLE_EQ(c.exploration, 0.5);
  EXPECT_DOUBLE_EQ(c.discount, 0.99);
  EXPECT_THROW((BanditConfig{-1.0, 0.9}.validate()), std::invalid_argument);
  EXPECT_THROW((BanditConfig{0.5, 0.0}.validate()), std::invalid_argument);
  EXPECT_THROW((BanditConfig{0.5, 1.1}.validate()), std::invalid_argument);
}

TEST(Bandit, UnplayedArmsComeFirstInIndexOrder) {
  BanditState b(3, {0.5, 1.0});
  EXPECT_EQ(b.select(), 0u);
  b.update(0, 1.0);
  EXPECT_EQ(b.select(), 1u);
  b.update(1, 0.0);
  EXPECT_EQ(b.select(), 2u);
}

TEST(Bandit, UcbMatchesHandComputedIndex) {
  BanditState b(2, {0.5, 1.0});
  b.update(0, 0.8);
  b.update(0, 0.6);
  b.update(1, 0.9);
  EXPECT_NEAR(b.ucb(0), 0.7 + 0.5 * std::sqrt(std::log(3.0) / 2.0), 1e-15);
  EXPECT_NEAR(b.ucb(1), 0.9 + 0.5 * std::sqrt(std::log(3.0) / 1.0), 1e-15);
  EXPECT_EQ(b.select(), 1u);
}

TEST(Bandit, TiesGoToLowestIndex) {
  BanditState b(3, {0.5, 1.0});
  for (std::size_t j = 0; j < 3; ++j) b.update(j, 0.5);
  EXPECT_EQ(b.select(), 0u);
}

TEST(Bandit, DiscountScalesStatistics) {
  BanditState b(2, {0.5, 0.9});
  b.update(0, 1.0);
  b.update(1, 0.5);
  b.discount();
  EXPECT_NEAR(b.plays(0), 0.9, 1e-15);
  EXPECT_NEAR(b.cumulative_reward(1), 0.45, 1e-15);
  EXPECT_NEAR(b.total_plays(), 1.8, 1e-15);
  EXPECT_NEAR(b.mean(1), 0.5, 1e-15);  // means are invariant
  BanditState u(1, {0.5, 1.0});
  u.update(0, 0.3);
  u.discount();
  EXPECT_DOUBLE_EQ(u.plays(0), 1.0);
}

TEST(Bandit, LogClampForDiscountedTotals) {
  BanditState b(1, {0.5, 0.1});
  b.update(0, 0.4);
  b.discount();  // total 0.1 < 1
  EXPECT_DOUBLE_EQ(b.ucb(0), 0.4);
}

TEST(Bandit, RejectsBadUpdates) {
  BanditState b(2, {});
  EXPECT_THROW(b.update(2, 0.5), std::out_of_range);
  EXPECT_THROW(b.update(0, 1.5), std::invalid_argument);
  EXPECT_THROW(b.update(0, -0.1), std::invalid_argument);
  EXPECT_THROW(BanditState().select(), std::logic_error);
}

TEST(Bandit, StationaryBernoulliFindsBestArm) {
  const std::vector<double> p{0.2, 0.4, 0.5, 0.6, 0.85};
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    BanditState b(p.size(), {0.5, 1.0});
    int best_late = 0;
    for (int t = 0; t < 1000; ++t) {
      const auto j = b.select();
      b.update(j, u(rng) < p[j] ? 1.0 : 0.0);
      if (t >= 900 && j == 4) ++best_late;
    }
    EXPECT_GT(best_late, 80) << "seed " << seed;
  }
}

TEST(Bandit, TraceCountsAndCsv) {
  BanditTrace t;
  t.record(1, 0.5);
  t.record(1, 0.25);
  t.record(0, 1.0);
  EXPECT_EQ(t.counts(3), (std::vector<std::size_t>{1, 2, 0}));
  std::ostringstream out;
  t.write_csv(out);
  EXPECT_EQ(out.str(), "pull,arm,reward\n0,1,0.5\n1,1,0.25\n2,0,1\n");
}

TEST(Bandit, DiscountingTracksASwap) {
  double ucb = 0.0, ducb = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (double gamma : {1.0, 0.9}) {
      std::vector<double> p{0.8, 0.4};
      std::mt19937_64 rng(seed);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      BanditState b(2, {0.5, gamma});
      int best = 0;
      // a long stationary phase entrenches the undiscounted statistics
      for (int t = 0; t < 2500; ++t) {
        if (t == 2000) std::swap(p[0], p[1]);
        const auto j = b.select();
        b.update(j, u(rng) < p[j] ? 1.0 : 0.0);
        b.discount();
        if (t >= 2100 && j == 1) ++best;
      }
      (gamma < 1.0 ? ducb : ucb) += best / 400.0 / 5.0;
    }
  }
  EXPECT_GT(ducb, 0.7);
  EXPECT_GT(ducb, ucb);
}
