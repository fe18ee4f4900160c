#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <vector>

#include "rotir/assignment.hpp"
#include "rotir/error.hpp"
#include "rotir/matcher.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace rotir;

namespace {

double max_diff(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

torch::Tensor marginal_rows(const AssignmentMatrix& A) { return A.log_probs.to(torch::kFloat64).exp().sum(2); }
torch::Tensor marginal_cols(const AssignmentMatrix& A) { return A.log_probs.to(torch::kFloat64).exp().sum(1); }

torch::Tensor expected_marginal(int64_t count, double bin) {
  auto t = torch::ones({count + 1}, torch::kFloat64);
  t[count] = bin;
  return t;
}

}  // namespace

TEST(Dustbin, AugmentAppendsAlphaRowAndColumn) {
  auto s = torch::arange(6, torch::kFloat32).view({1, 2, 3});
  auto z = augment_with_dustbin(s, torch::tensor(-1.5f));
  ASSERT_EQ(z.sizes(), torch::IntArrayRef({1, 3, 4}));
  EXPECT_TRUE(torch::equal(z.narrow(1, 0, 2).narrow(2, 0, 3), s));
  EXPECT_EQ(z[0][2].eq(-1.5f).all().item<bool>(), true);
  EXPECT_EQ(z[0].select(1, 3).eq(-1.5f).all().item<bool>(), true);
}

TEST(Dustbin, LogMarginal) {
  auto lm = dustbin_log_marginal(3, 5.0);
  EXPECT_EQ(lm.size(0), 4);
  EXPECT_EQ(lm.narrow(0, 0, 3).abs().max().item<double>(), 0.0);
  EXPECT_NEAR(lm[3].item<double>(), std::log(5.0), 1e-15);
}

class SinkhornMarginals : public ::testing::TestWithParam<std::pair<int, int>> {};

TEST_P(SinkhornMarginals, HitTargetsAfterHundredIterations) {
  const auto [m, n] = GetParam();
  torch::manual_seed(m * 1000 + n);
  auto scores = torch::randn({2, m, n}) * 3.0;
  const auto A = sinkhorn(scores, torch::tensor(0.5f), 100);
  EXPECT_EQ(A.iterations_used, 100);
  EXPECT_LT(max_diff(marginal_rows(A), expected_marginal(m, n).expand({2, m + 1})), 1e-4);
  EXPECT_LT(max_diff(marginal_cols(A), expected_marginal(n, m).expand({2, n + 1})), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Sizes, SinkhornMarginals,
                         ::testing::Values(std::make_pair(8, 8), std::make_pair(5, 9), std::make_pair(256, 256)));

TEST(Sinkhorn, MatchesNewtonReferenceOnSmallProblems) {
  torch::manual_seed(11);
  for (int size : {2, 3}) {
    for (int trial = 0; trial < 5; ++trial) {
      auto scores = torch::randn({1, size, size}, torch::kFloat64) * 2.0;
      const double alpha = 0.3 * trial - 0.5;
      const auto A = sinkhorn(scores, torch::tensor(alpha, torch::kFloat64), 100);
      const auto Z = augment_with_dustbin(scores, torch::tensor(alpha, torch::kFloat64))[0];
      std::vector<std::vector<double>> z(size + 1, std::vector<double>(size + 1));
      for (int i = 0; i <= size; ++i) {
        for (int j = 0; j <= size; ++j) z[i][j] = Z[i][j].item<double>();
      }
      std::vector<double> a(size + 1, 1.0), b(size + 1, 1.0);
      a[size] = size;
      b[size] = size;
      const auto ref = testsupport::newton_entropic_ot(z, a, b);
      for (int i = 0; i <= size; ++i) {
        for (int j = 0; j <= size; ++j) EXPECT_NEAR(A.log_probs[0][i][j].item<double>(), ref[i][j], 1e-4);
      }
    }
  }
}

TEST(Sinkhorn, InvariantToJointShiftOfScoresAndAlpha) {
  torch::manual_seed(12);
  auto s = torch::randn({1, 6, 7}, torch::kFloat64);
  const auto A = sinkhorn(s, torch::tensor(0.2, torch::kFloat64), 100);
  const auto B = sinkhorn(s + 4.0, torch::tensor(4.2, torch::kFloat64), 100);
  EXPECT_LT(max_diff(A.log_probs, B.log_probs), 1e-5);
}

TEST(Sinkhorn, SurvivesScoreSpreadsBeyondTheExpRange) {
  torch::manual_seed(13);
  auto s = torch::randn({1, 16, 16}) * 800.0;
  const auto A = sinkhorn(s, torch::tensor(1.0f), 100);
  EXPECT_TRUE(torch::isfinite(A.log_probs).all().item<bool>());
  EXPECT_LT(max_diff(marginal_cols(A), expected_marginal(16, 16).expand({1, 17})), 1e-3);
}

TEST(Sinkhorn, ExpDomainAgreesWithLogDomain) {
  torch::manual_seed(14);
  auto s = torch::randn({2, 7, 5}, torch::kFloat64) * 2.0;
  auto alpha = torch::tensor(0.7, torch::kFloat64);
  const auto A = sinkhorn(s, alpha, 300);
  auto L = sinkhorn_log_domain(augment_with_dustbin(s, alpha), dustbin_log_marginal(7, 5), dustbin_log_marginal(5, 7),
                               300);
  EXPECT_LT(max_diff(A.log_probs, L), 1e-8);
}

TEST(Sinkhorn, BackwardMatchesAutogradThroughLogDomain) {
  // Two independent derivative routes: the hand-written reverse pass and ordinary autograd
  // through the log-domain iteration, both on a converged problem.
  torch::manual_seed(15);
  auto s0 = torch::randn({2, 4, 5}, torch::kFloat64);
  auto w = torch::randn({2, 5, 6}, torch::kFloat64);
  auto s1 = s0.clone().requires_grad_(true);
  auto a1 = torch::tensor(0.4, torch::kFloat64).requires_grad_(true);
  (sinkhorn(s1, a1, 300).log_probs * w).sum().backward();
  auto s2 = s0.clone().requires_grad_(true);
  auto a2 = torch::tensor(0.4, torch::kFloat64).requires_grad_(true);
  (sinkhorn_log_domain(augment_with_dustbin(s2, a2), dustbin_log_marginal(4, 5), dustbin_log_marginal(5, 4), 300) * w)
      .sum()
      .backward();
  EXPECT_LT(max_diff(s1.grad(), s2.grad()), 1e-6);
  EXPECT_NEAR(a1.grad().item<double>(), a2.grad().item<double>(), 1e-6);
}

TEST(Sinkhorn, FiniteDifferenceGradient) {
  torch::manual_seed(16);
  auto w = torch::randn({1, 4, 4}, torch::kFloat64);
  auto f = [&](const torch::Tensor& s) {
    return (sinkhorn(s, torch::tensor(0.3, torch::kFloat64), 100).log_probs * w).sum();
  };
  EXPECT_LT(testsupport::gradient_rel_error(f, torch::randn({1, 3, 3}, torch::kFloat64)), 1e-3);
}

TEST(Sinkhorn, Errors) {
  auto s = torch::zeros({1, 2, 2});
  EXPECT_THROW(sinkhorn(s, torch::tensor(1.0f), 0), ConfigError);
  auto bad = s.clone();
  bad[0][0][0] = std::nanf("");
  EXPECT_THROW(sinkhorn(bad, torch::tensor(1.0f), 10), NumericalError);
  EXPECT_THROW(sinkhorn(s, torch::tensor(INFINITY), 10), NumericalError);
  EXPECT_THROW(sinkhorn(torch::zeros({2, 2}), torch::tensor(1.0f), 10), ConfigError);
}

namespace {

PatchGrid tiny_grid() { return {2, 8}; }

torch::Tensor unit_heads(int count, double angle) {
  auto h = torch::zeros({count, 6}, torch::kFloat64);
  h.select(1, head::kSin).fill_(std::sin(angle));
  h.select(1, head::kCos).fill_(std::cos(angle));
  return h;
}

}  // namespace

TEST(ExtractMatches, MutualArgmaxWithDustbin) {
  // 4 x 4 grid tokens plus dustbins; rows 0..2 matched, row 3 prefers its dustbin.
  auto P = torch::full({5, 5}, 0.01, torch::kFloat64);
  P[0][1] = 0.9;
  P[1][0] = 0.8;
  P[2][2] = 0.7;
  P[2][3] = 0.05;
  P[3][4] = 0.9;
  P[4][3] = 0.9;
  auto m = extract_matches(P.log(), unit_heads(4, 0.2), unit_heads(4, 0.5), tiny_grid(), 0.2);
  ASSERT_EQ(m.size(), 3u);
  EXPECT_EQ(m[0].moving, 0);
  EXPECT_EQ(m[0].fixed, 1);
  EXPECT_NEAR(m[0].confidence, 0.9, 1e-12);
  EXPECT_NEAR(std::atan2(m[0].sin_theta, m[0].cos_theta), 0.3, 1e-12);
  EXPECT_EQ(m[2].moving, 2);
  EXPECT_EQ(m[2].fixed, 2);
}

TEST(ExtractMatches, OneSidedPreferenceIsDropped) {
  auto P = torch::full({5, 5}, 0.01, torch::kFloat64);
  P[0][0] = 0.5;
  P[1][0] = 0.6;  // column 0 prefers row 1, so row 0 has no mutual partner
  auto m = extract_matches(P.log(), unit_heads(4, 0), unit_heads(4, 0), tiny_grid(), 0.2);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].moving, 1);
  EXPECT_EQ(m[0].fixed, 0);
}

TEST(ExtractMatches, ThresholdAndTies) {
  auto P = torch::full({5, 5}, 0.01, torch::kFloat64);
  P[0][0] = 0.5;
  P[0][1] = 0.5;  // tie in row 0 goes to column 0
  P[1][2] = 0.15;  // mutual, under the threshold
  auto m = extract_matches(P.log(), unit_heads(4, 0), unit_heads(4, 0), tiny_grid(), 0.2);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].fixed, 0);
  EXPECT_EQ(extract_matches(P.log(), unit_heads(4, 0), unit_heads(4, 0), tiny_grid(), 0.1).size(), 2u);
  EXPECT_THROW(extract_matches(P.log(), unit_heads(4, 0), unit_heads(4, 0), tiny_grid(), 0.0), ConfigError);
  EXPECT_THROW(extract_matches(P.log(), unit_heads(4, 0), unit_heads(4, 0), tiny_grid(), 1.0), ConfigError);
  EXPECT_THROW(extract_matches(P.log(), unit_heads(4, 0), unit_heads(4, 0), {3, 8}, 0.2), ConfigError);
}

TEST(ExtractMatches, DegenerateHeadIsDropped) {
  auto P = torch::full({5, 5}, 0.01, torch::kFloat64);
  P[0][0] = 0.9;
  P[1][1] = 0.9;
  auto hf = unit_heads(4, 0);
  hf[1][head::kSin] = 0.0;
  hf[1][head::kCos] = 0.0;
  auto m = extract_matches(P.log(), unit_heads(4, 0), hf, {2, 8}, 0.2);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].fixed, 0);
}

TEST(ExtractMatches, RefinementMovesFromFixedPatchCenter) {
  auto P = torch::full({5, 5}, 0.01, torch::kFloat64);
  P[0][3] = 0.9;
  auto hf = unit_heads(4, 0);
  hf[3][head::kDx] = 0.4;
  hf[3][head::kDy] = -1.0;
  hf[3][head::kScale] = 0.25;
  const PatchGrid grid{2, 8};
  auto m = extract_matches(P.log(), unit_heads(4, 0), hf, grid, 0.2);
  ASSERT_EQ(m.size(), 1u);
  const Point2 c = patch_center(3, grid);
  EXPECT_NEAR(m[0].refined.x, c.x + 0.5 * std::tanh(0.4) * 8, 1e-12);
  EXPECT_NEAR(m[0].refined.y, c.y + 0.5 * std::tanh(-1.0) * 8, 1e-12);
  EXPECT_EQ(m[0].scale_exponent, 0.25);
}

TEST(ExtractMatches, EachTokenAppearsAtMostOnce) {
  torch::manual_seed(17);
  const PatchGrid grid{4, 4};
  for (int trial = 0; trial < 20; ++trial) {
    const auto A = sinkhorn(torch::randn({1, 16, 16}) * 4.0, torch::tensor(0.0f), 50);
    auto m = extract_matches(A.log_probs[0], torch::randn({16, 6}), torch::randn({16, 6}), grid, 0.05);
    std::set<int> rows, cols;
    for (const auto& x : m) {
      EXPECT_TRUE(rows.insert(x.moving).second);
      EXPECT_TRUE(cols.insert(x.fixed).second);
      EXPECT_GE(x.confidence, 0.05);
    }
  }
}
