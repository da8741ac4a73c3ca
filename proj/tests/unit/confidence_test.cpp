#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gatedcot/confidence.hpp"
#include "gatedcot/error.hpp"
#include "test_support.hpp"

using namespace gatedcot;
using testing_support::compensated_mean;
using testing_support::position;

TEST(LocalMargin, EqualTopTwoGivesZero) {
  EXPECT_EQ(local_margin(position(0, {2.0, 2.0})), 0.0);
}

TEST(LocalMargin, DirectSubtraction) {
  EXPECT_NEAR(local_margin(position(0, {-0.1, -2.4})), 2.3, 1e-12);
}

TEST(LocalMargin, LogSoftmaxPreservesLogitGap) {
  const std::vector<double> logits{5.0, 3.0, 1.0};
  // Oracle: log-softmax by hand, max-shifted for stability.
  double z = 0.0;
  for (double l : logits) z += std::exp(l - 5.0);
  const double log_norm = 5.0 + std::log(z);
  const auto lp = position(0, {logits[0] - log_norm, logits[1] - log_norm,
                               logits[2] - log_norm});
  const auto raw = position(0, {5.0, 3.0, 1.0});
  EXPECT_EQ(local_margin(raw), 2.0);
  EXPECT_EQ(local_margin(lp), 2.0);
}

TEST(LocalMargin, SingleEntryIsUnavailable) {
  EXPECT_THROW(local_margin(position(3, {-0.5})), MarginUnavailable);
}

TEST(LocalMargin, UnsortedEntriesRejected) {
  EXPECT_THROW(local_margin(position(0, {-2.0, -1.0})), std::invalid_argument);
}

TEST(AggregateConfidence, MeanOfThree) {
  const std::vector<double> m{1.0, 3.0, 2.0};
  EXPECT_EQ(aggregate_confidence(m), 2.0);
}

TEST(AggregateConfidence, Singleton) {
  const std::vector<double> m{0.0};
  EXPECT_EQ(aggregate_confidence(m), 0.0);
}

TEST(AggregateConfidence, EmptyIsEmptyStep) {
  EXPECT_THROW(aggregate_confidence(std::vector<double>{}), EmptyStep);
}

TEST(AggregateConfidence, ThousandUniformMarginsMatchCompensatedOracle) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> m(1000);
  for (auto& v : m) v = u(rng);
  EXPECT_NEAR(aggregate_confidence(m), compensated_mean(m), 1e-12);
}

TEST(ConfidenceFromStep, ComposesMarginAndMean) {
  StepRecord step;
  step.position_logits = {position(0, {2.0, 1.0}), position(1, {3.0, 3.0})};
  const auto report = confidence_from_step(step);
  EXPECT_EQ(report.margins, (std::vector<double>{1.0, 0.0}));
  EXPECT_EQ(report.aggregate, 0.5);
  EXPECT_EQ(report.position_count, 2u);
}

TEST(ConfidenceFromStep, StopSequencePositionsDoNotCount) {
  StepRecord step;
  step.position_logits = {position(0, {0.0, -0.4}), position(1, {0.0, -0.2})};
  step.excluded_positions = {position(2, {0.0, -9.0}), position(3, {0.0, -9.0})};
  // Oracle: mean over the hand-filtered positions only.
  const double expected = (0.4 + 0.2) / 2.0;
  EXPECT_NEAR(confidence_from_step(step).aggregate, expected, 1e-15);
}

TEST(ConfidenceFromStep, TopOneOnlyPositionIsUnavailable) {
  StepRecord step;
  step.position_logits = {position(0, {0.0, -1.0}), position(1, {-0.3})};
  EXPECT_THROW(confidence_from_step(step), MarginUnavailable);
}

TEST(ConfidenceFromStep, ZeroPositionsIsEmptyStep) {
  EXPECT_THROW(confidence_from_step(StepRecord{}), EmptyStep);
}

TEST(ConfidenceFromStep, HigherRequiredKIsEnforced) {
  StepRecord step;
  step.position_logits = {position(0, {0.0, -1.0})};
  EXPECT_THROW(confidence_from_step(step, 3), MarginUnavailable);
}

class ConfidenceProperties : public ::testing::TestWithParam<int> {};

TEST_P(ConfidenceProperties, ShiftInvarianceNonNegativityBoundsPermutation) {
  std::mt19937_64 rng(static_cast<unsigned>(GetParam()));
  std::uniform_int_distribution<int> len(1, 40);
  std::uniform_real_distribution<double> score(-20.0, 5.0);
  // Dyadic shifts keep the additions exact for scores on a 2^-20 grid.
  std::uniform_int_distribution<long> shift_units(-(1L << 30), 1L << 30);

  StepRecord step;
  const int n = len(rng);
  for (int i = 0; i < n; ++i) {
    double a = std::ldexp(std::round(std::ldexp(score(rng), 20)), -20);
    double b = std::ldexp(std::round(std::ldexp(score(rng), 20)), -20);
    if (a < b) std::swap(a, b);
    step.position_logits.push_back(position(static_cast<std::size_t>(i), {a, b}));
  }
  const auto report = confidence_from_step(step);
  for (double m : report.margins) EXPECT_GE(m, 0.0);
  EXPECT_GE(report.aggregate, 0.0);
  const auto [lo, hi] =
      std::minmax_element(report.margins.begin(), report.margins.end());
  EXPECT_LE(*lo, report.aggregate);
  EXPECT_GE(*hi, report.aggregate);

  const double c = std::ldexp(static_cast<double>(shift_units(rng)), -20);
  StepRecord shifted = step;
  for (auto& p : shifted.position_logits) {
    for (auto& e : p.top_entries) e.log_score += c;
  }
  EXPECT_EQ(confidence_from_step(shifted).margins, report.margins);

  auto permuted = report.margins;
  std::shuffle(permuted.begin(), permuted.end(), rng);
  EXPECT_NEAR(aggregate_confidence(permuted), report.aggregate,
              1e-12 * std::max(1.0, report.aggregate));
}

INSTANTIATE_TEST_SUITE_P(RandomSteps, ConfidenceProperties,
                         ::testing::Range(0, 50));
