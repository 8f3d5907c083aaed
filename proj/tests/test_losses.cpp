#include "sbtrack/losses.hpp"
#include "sbtrack/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

using namespace sbtrack;

namespace {

double lg(double x) { return 1.0 / (1.0 + std::exp(-x)); }

ScoredBranch gt_branch(double raw) { return {raw, 0, true}; }
ScoredBranch neg(double raw, int ids = 1) { return {raw, ids, false}; }

// Central differences of value(raws) against the analytic gradient;
// raws[0] is the gt score when has_gt.
void expect_gradients_match(const std::function<LossOutput(const std::vector<double>&)>& f,
                            std::vector<double> raws, bool has_gt) {
  const LossOutput base = f(raws);
  const double h = 1e-6;
  for (std::size_t i = 0; i < raws.size(); ++i) {
    const double keep = raws[i];
    raws[i] = keep + h;
    const double up = f(raws).value;
    raws[i] = keep - h;
    const double down = f(raws).value;
    raws[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double analytic = has_gt ? (i == 0 ? base.gt_grad : base.score_grads[i - 1]) : base.score_grads[i];
    // rounding in the stencil is about eps * |value| / h, a few 1e-9 at most
    EXPECT_NEAR(numeric, analytic, 1e-8 + 1e-6 * std::abs(analytic))
        << "coordinate " << i;
  }
}

// Keeps every score at least 0.05 away from any hinge kink so the
// finite-difference stencil never straddles one.
bool hinges_clear(const std::vector<double>& raws, double alpha) {
  for (std::size_t i = 1; i < raws.size(); ++i) {
    if (std::abs(alpha - lg(raws[0]) + lg(raws[i])) < 0.05) return false;
  }
  return true;
}

}  // namespace

TEST(MarginLoss, SymmetricScoresGiveAlpha) {
  const auto out = margin_loss(gt_branch(0), std::vector{neg(0)}, 1.0);
  EXPECT_DOUBLE_EQ(out.value, 1.0);
}

TEST(MarginLoss, SaturatedLimitGoesToZero) {
  const auto out = margin_loss(gt_branch(40), std::vector{neg(-40)}, 1.0);
  EXPECT_NEAR(out.value, 0.0, 1e-15);
}

TEST(MarginLoss, ClosedFormExample) {
  const auto out = margin_loss(gt_branch(2), std::vector{neg(-1)}, 1.0);
  EXPECT_NEAR(out.value, 1.0 - lg(2.0) + lg(-1.0), 1e-15);
  EXPECT_NEAR(out.value, 0.388144, 1e-6);
}

TEST(MarginLoss, EmptyNegativesGiveZero) {
  const auto out = margin_loss(gt_branch(0.3), std::vector<ScoredBranch>{}, 1.0);
  EXPECT_EQ(out.value, 0.0);
  EXPECT_EQ(out.gt_grad, 0.0);
  EXPECT_TRUE(out.score_grads.empty());
}

TEST(MarginLoss, RejectsNonPositiveAlpha) {
  EXPECT_THROW(margin_loss(gt_branch(0), std::vector{neg(0)}, 0.0), std::invalid_argument);
}

TEST(MarginLoss, InactiveHingeContributesNothing) {
  const auto out = margin_loss(gt_branch(5), std::vector{neg(-5), neg(0)}, 0.3);
  // first hinge: 0.3 - 0.9933 + 0.0067 < 0; second: 0.3 - 0.9933 + 0.5 < 0
  EXPECT_EQ(out.value, 0.0);
  EXPECT_EQ(out.score_grads[0], 0.0);
  EXPECT_EQ(out.score_grads[1], 0.0);
}

TEST(MarginLoss, StrictlyPositiveWithAlphaOneAndNonIncreasingInNegatives) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const double g = rng.uniform(-10, 10);
    std::vector<ScoredBranch> ns;
    const int n = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n; ++i) ns.push_back(neg(rng.uniform(-10, 10)));
    const double v = margin_loss(gt_branch(g), ns, 1.0).value;
    EXPECT_GT(v, 0.0);
    auto lower = ns;
    lower[rng.below(static_cast<std::uint64_t>(n))].raw_score -= rng.uniform(0, 3);
    EXPECT_LE(margin_loss(gt_branch(g), lower, 1.0).value, v + 1e-15);
  }
}

TEST(MarginLoss, GradientsMatchFiniteDifferences) {
  Rng rng(2);
  int checked = 0;
  while (checked < 200) {
    const double alpha = rng.uniform(0.2, 1.5);
    std::vector<double> raws;
    const int n = 1 + static_cast<int>(rng.below(5));
    for (int i = 0; i <= n; ++i) raws.push_back(rng.uniform(-4, 4));
    if (!hinges_clear(raws, alpha)) continue;
    expect_gradients_match(
        [&](const std::vector<double>& r) {
          std::vector<ScoredBranch> ns;
          for (std::size_t i = 1; i < r.size(); ++i) ns.push_back(neg(r[i]));
          return margin_loss(gt_branch(r[0]), ns, alpha);
        },
        raws, true);
    ++checked;
  }
}

TEST(RankLoss, EqualScoresDifferentIdsGiveHalf) {
  const auto out = rank_loss(std::vector{neg(0.4, 2), neg(0.4, 0)});
  EXPECT_DOUBLE_EQ(out.value, 0.5);
}

TEST(RankLoss, EqualIdsContributeNothing) {
  const auto out = rank_loss(std::vector{neg(1, 2), neg(-3, 2), neg(0.5, 2)});
  EXPECT_EQ(out.value, 0.0);
  for (double g : out.score_grads) EXPECT_EQ(g, 0.0);
}

TEST(RankLoss, ClosedFormExample) {
  const auto out = rank_loss(std::vector{neg(2, 3), neg(1, 1)});
  EXPECT_NEAR(out.value, lg(1.0), 1e-15);
  EXPECT_NEAR(out.value, 0.731059, 1e-6);
}

TEST(RankLoss, FewerThanTwoBranchesGiveZero) {
  EXPECT_EQ(rank_loss(std::vector<ScoredBranch>{}).value, 0.0);
  EXPECT_EQ(rank_loss(std::vector{neg(1, 1)}).value, 0.0);
}

TEST(RankLoss, PairSwapShiftAndRangeProperties) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = neg(rng.uniform(-5, 5), static_cast<int>(rng.below(4)));
    auto b = neg(rng.uniform(-5, 5), static_cast<int>(rng.below(4)));
    if (a.ids_count == b.ids_count) b.ids_count = a.ids_count + 1;
    const double ab = rank_loss(std::vector{a, b}).value;
    EXPECT_GT(ab, 0.0);
    EXPECT_LT(ab, 1.0);
    EXPECT_NEAR(ab, rank_loss(std::vector{b, a}).value, 1e-15);
    const double shift = rng.uniform(-10, 10);
    auto a2 = a, b2 = b;
    a2.raw_score += shift;
    b2.raw_score += shift;
    EXPECT_NEAR(rank_loss(std::vector{a2, b2}).value, ab, 1e-12);
  }
}

TEST(RankLoss, ScaleMultipliesValue) {
  const std::vector b{neg(0.3, 0), neg(-0.2, 2), neg(1.1, 1)};
  EXPECT_NEAR(rank_loss(b, 2.5).value, 2.5 * rank_loss(b).value, 1e-15);
}

TEST(RankLoss, GradientsMatchFiniteDifferences) {
  Rng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> raws;
    std::vector<int> ids;
    const int n = 2 + static_cast<int>(rng.below(5));
    for (int i = 0; i < n; ++i) {
      raws.push_back(rng.uniform(-4, 4));
      ids.push_back(static_cast<int>(rng.below(3)));
    }
    expect_gradients_match(
        [&](const std::vector<double>& r) {
          std::vector<ScoredBranch> bs;
          for (std::size_t i = 0; i < r.size(); ++i) bs.push_back(neg(r[i], ids[i]));
          return rank_loss(bs);
        },
        raws, false);
  }
}

TEST(StepLoss, SingleEqualNegativeGivesOne) {
  EXPECT_DOUBLE_EQ(step_loss(gt_branch(0), std::vector{neg(0)}, 1.0).value, 1.0);
}

TEST(StepLoss, ZeroInSaturatedEqualIdsLimit) {
  const auto out = step_loss(gt_branch(50), std::vector{neg(-50, 1), neg(-49, 1)}, 0.5);
  EXPECT_NEAR(out.value, 0.0, 1e-15);
}

TEST(StepLoss, EqualsComponentSum) {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    const auto g = gt_branch(rng.uniform(-3, 3));
    std::vector<ScoredBranch> rs;
    for (int i = 0; i < 4; ++i) rs.push_back(neg(rng.uniform(-3, 3), static_cast<int>(rng.below(3))));
    const double w = rng.uniform(0, 2);
    const auto m = margin_loss(g, rs, 1.0);
    const auto r = rank_loss(rs, w);
    const auto s = step_loss(g, rs, 1.0, w);
    EXPECT_EQ(s.value, m.value + r.value);
    EXPECT_EQ(s.gt_grad, m.gt_grad);
    for (std::size_t i = 0; i < rs.size(); ++i) EXPECT_EQ(s.score_grads[i], m.score_grads[i] + r.score_grads[i]);
  }
}

TEST(CrossEntropy, SymmetricPoint) {
  const auto out = cross_entropy_baseline(gt_branch(0), true);
  EXPECT_NEAR(out.value, std::log(2.0), 1e-15);
  EXPECT_DOUBLE_EQ(out.score_grads[0], -0.5);
}

TEST(CrossEntropy, SaturatedPositive) { EXPECT_NEAR(cross_entropy_baseline(gt_branch(60), true).value, 0.0, 1e-15); }

TEST(CrossEntropy, NegativeLabelAtOne) {
  EXPECT_NEAR(cross_entropy_baseline(neg(1), false).value, std::log1p(std::exp(1.0)), 1e-15);
  EXPECT_NEAR(cross_entropy_baseline(neg(1), false).value, 1.313262, 1e-6);
}

TEST(CrossEntropy, StableForLargeMagnitudes) {
  EXPECT_NEAR(cross_entropy_baseline(neg(-800), true).value, 800.0, 1e-9);
  EXPECT_NEAR(cross_entropy_baseline(neg(800), false).value, 800.0, 1e-9);
}

TEST(CrossEntropy, GradientMatchesFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    const bool label = rng.bernoulli(0.5);
    expect_gradients_match([&](const std::vector<double>& r) { return cross_entropy_baseline(neg(r[0]), label); },
                           {rng.uniform(-6, 6)}, false);
  }
}
