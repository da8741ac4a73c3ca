#include <gtest/gtest.h>

#include <limits>
#include <random>

#include "gatedcot/error.hpp"
#include "gatedcot/gating.hpp"

using namespace gatedcot;

namespace {
GatingConfig with_tau(double tau) {
  GatingConfig c;
  c.tau = tau;
  return c;
}
}  // namespace

TEST(DecideInsertion, BelowThresholdInserts) {
  const auto d = decide_insertion(0.15, with_tau(0.2), 0);
  EXPECT_TRUE(d.insert);
  EXPECT_EQ(d.reason, GatingReason::BelowThreshold);
  EXPECT_EQ(d.confidence, 0.15);
  EXPECT_EQ(d.tau_used, 0.2);
}

TEST(DecideInsertion, BoundaryIsStrict) {
  const auto d = decide_insertion(0.2, with_tau(0.2), 0);
  EXPECT_FALSE(d.insert);
  EXPECT_EQ(d.reason, GatingReason::AtOrAboveThreshold);
}

TEST(DecideInsertion, ZeroTauNeverInsertsOnGrid) {
  EXPECT_FALSE(decide_insertion(0.0, with_tau(0.0), 0).insert);
  // Oracle: elementwise C < tau over a 0.05 grid.
  for (int ci = 0; ci <= 20; ++ci) {
    for (int ti = 0; ti <= 20; ++ti) {
      const double c = ci * 0.05;
      const double t = ti * 0.05;
      EXPECT_EQ(decide_insertion(c, with_tau(t), 0).insert, c < t)
          << "c=" << c << " tau=" << t;
    }
  }
}

TEST(DecideInsertion, BudgetExhausted) {
  GatingConfig c = with_tau(0.5);
  c.max_insertions_per_trace = 2;
  EXPECT_TRUE(decide_insertion(0.1, c, 1).insert);
  const auto d = decide_insertion(0.1, c, 2);
  EXPECT_FALSE(d.insert);
  EXPECT_EQ(d.reason, GatingReason::InsertionBudgetExhausted);
}

TEST(DecideInsertion, ZeroBudgetDominatesAnyTau) {
  GatingConfig c = with_tau(std::numeric_limits<double>::infinity());
  c.max_insertions_per_trace = 0;
  for (double conf : {0.0, 0.1, 5.0}) {
    EXPECT_FALSE(decide_insertion(conf, c, 0).insert);
  }
}

TEST(DecideInsertion, AlwaysSentinelInsertsEverything) {
  const auto always = with_tau(std::numeric_limits<double>::infinity());
  EXPECT_TRUE(decide_insertion(1e300, always, 0).insert);
  EXPECT_TRUE(decide_insertion(0.0, always, 100).insert);
}

TEST(DecideInsertion, RejectsNegativeOrNaNConfidence) {
  EXPECT_THROW(decide_insertion(-0.1, with_tau(0.2), 0), std::invalid_argument);
  EXPECT_THROW(decide_insertion(std::nan(""), with_tau(0.2), 0),
               std::invalid_argument);
}

TEST(DecideInsertion, Deterministic) {
  EXPECT_EQ(decide_insertion(0.3, with_tau(0.4), 1),
            decide_insertion(0.3, with_tau(0.4), 1));
}

TEST(GatingConfig, Validation) {
  EXPECT_NO_THROW(with_tau(0.2).validate());
  EXPECT_NO_THROW(with_tau(std::numeric_limits<double>::infinity()).validate());
  EXPECT_THROW(with_tau(std::nan("")).validate(), ConfigError);
  EXPECT_THROW(with_tau(-std::numeric_limits<double>::infinity()).validate(),
               ConfigError);
  EXPECT_TRUE(with_tau(1.5).outside_search_range());
  EXPECT_TRUE(with_tau(-0.1).outside_search_range());
  EXPECT_FALSE(with_tau(0.7).outside_search_range());
  EXPECT_FALSE(
      with_tau(std::numeric_limits<double>::infinity()).outside_search_range());
}

TEST(SweepInsertionCounts, HandEvaluatedExample) {
  const std::vector<std::vector<double>> seqs{{0.1, 0.5}};
  const std::vector<double> grid{0.0, 0.3, 1.0};
  const auto table = sweep_insertion_counts(seqs, grid);
  ASSERT_EQ(table.size(), 3u);
  EXPECT_EQ(table[0].total_insertions, 0u);
  EXPECT_EQ(table[1].total_insertions, 1u);
  EXPECT_EQ(table[2].total_insertions, 2u);
}

TEST(SweepInsertionCounts, DuplicateTauIdentical) {
  const std::vector<std::vector<double>> seqs{{0.1, 0.2, 0.3}, {0.05}};
  const std::vector<double> grid{0.25, 0.25};
  const auto table = sweep_insertion_counts(seqs, grid);
  EXPECT_EQ(table[0].total_insertions, table[1].total_insertions);
}

TEST(SweepInsertionCounts, MonotoneAndZeroAtZeroOnRandomSequences) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.2);
  std::vector<std::vector<double>> seqs(100);
  for (auto& s : seqs) {
    s.resize(1 + rng() % 8);
    for (auto& v : s) v = u(rng);
  }
  std::vector<double> grid;
  for (int i = 0; i <= 100; ++i) grid.push_back(i * 0.01);
  const auto table = sweep_insertion_counts(seqs, grid);
  EXPECT_EQ(table.front().total_insertions, 0u);
  for (std::size_t i = 1; i < table.size(); ++i) {
    EXPECT_LE(table[i - 1].total_insertions, table[i].total_insertions);
  }
}
