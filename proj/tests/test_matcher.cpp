#include <gtest/gtest.h>

#include <cmath>

#include "rotir/error.hpp"
#include "rotir/matcher.hpp"

using namespace rotir;

namespace {

double max_diff(const torch::Tensor& a, const torch::Tensor& b) { return (a - b).abs().max().item<double>(); }

MatcherConfig small_matcher(bool pe) {
  MatcherConfig c;
  c.in_channels = 8;
  c.grid_size = 4;
  c.width = 16;
  c.heads = 2;
  c.blocks = 2;
  c.positional_encoding = pe;
  return c;
}

}  // namespace

TEST(PositionalEncoding, OriginIsSinZeroCosOne) {
  auto pe = positional_encoding(16, 64);
  ASSERT_EQ(pe.sizes(), torch::IntArrayRef({256, 64}));
  for (int c = 0; c < 64; c += 2) {
    EXPECT_EQ(pe[0][c].item<float>(), 0.0f);
    EXPECT_EQ(pe[0][c + 1].item<float>(), 1.0f);
  }
}

TEST(PositionalEncoding, ClosedFormAtOnePosition) {
  const int S = 16, D = 32;
  auto pe = positional_encoding(S, D);
  const int row = 5, col = 11;
  for (int c = 0; c < D / 4; ++c) {
    const double w = std::pow(10000.0, -2.0 * c / (D / 2.0));
    EXPECT_NEAR(pe[row * S + col][4 * c + 0].item<double>(), std::sin(col * w), 1e-6);
    EXPECT_NEAR(pe[row * S + col][4 * c + 1].item<double>(), std::cos(col * w), 1e-6);
    EXPECT_NEAR(pe[row * S + col][4 * c + 2].item<double>(), std::sin(row * w), 1e-6);
    EXPECT_NEAR(pe[row * S + col][4 * c + 3].item<double>(), std::cos(row * w), 1e-6);
  }
}

TEST(PositionalEncoding, BoundedAndDistinct) {
  auto pe = positional_encoding(16, 64);
  EXPECT_LE(pe.abs().max().item<double>(), 1.0);
  auto d = torch::cdist(pe.to(torch::kFloat64), pe.to(torch::kFloat64));
  d.fill_diagonal_(1e9);
  EXPECT_GT(d.min().item<double>(), 0.0);
}

TEST(PositionalEncoding, WidthMustBeMultipleOfFour) { EXPECT_THROW(positional_encoding(4, 18), ConfigError); }

TEST(LinearAttention, SingleTokenReturnsItsValue) {
  auto q = torch::randn({1, 1, 4}), k = torch::randn({1, 1, 4}), v = torch::randn({1, 1, 4});
  EXPECT_LT(max_diff(linear_attention(q, k, v), v), 1e-6);
}

TEST(LinearAttention, IdenticalKeysAverageValues) {
  auto q = torch::randn({1, 6, 4});
  auto k = torch::randn({1, 1, 4}).expand({1, 6, 4});
  auto v = torch::randn({1, 6, 4});
  auto out = linear_attention(q, k, v);
  EXPECT_LT(max_diff(out, v.mean(1, true).expand_as(out)), 1e-5);
}

TEST(LinearAttention, MatchesQuadraticEvaluation) {
  torch::manual_seed(1);
  auto q = torch::randn({2, 5, 3}, torch::kFloat64), k = torch::randn({2, 5, 3}, torch::kFloat64);
  auto v = torch::randn({2, 5, 3}, torch::kFloat64);
  auto phi = [](const torch::Tensor& t) { return torch::elu(t) + 1.0; };
  auto A = torch::matmul(phi(q), phi(k).transpose(1, 2));  // explicit L x L weights
  auto expected = torch::matmul(A / A.sum(2, true), v);
  EXPECT_LT(max_diff(linear_attention(q, k, v), expected), 1e-6);
}

TEST(LinearAttention, OutputsAreConvexCombinations) {
  torch::manual_seed(2);
  auto q = torch::randn({1, 20, 8}) * 3, k = torch::randn({1, 30, 8}) * 3, v = torch::randn({1, 30, 8});
  auto out = linear_attention(q, k, v);
  auto lo = std::get<0>(v.min(1, true)), hi = std::get<0>(v.max(1, true));
  EXPECT_TRUE((out >= lo - 1e-5).all().item<bool>());
  EXPECT_TRUE((out <= hi + 1e-5).all().item<bool>());
}

TEST(LinearAttention, RejectsEmptySequence) {
  EXPECT_THROW(linear_attention(torch::zeros({1, 0, 4}), torch::zeros({1, 0, 4}), torch::zeros({1, 0, 4})),
               ConfigError);
}

TEST(Canonicalize, InvariantsIgnoreAGlobalTurnOfAllVectors) {
  torch::manual_seed(3);
  auto f = torch::randn({2, 8, 3, 3});
  const double phi = 0.7;
  auto v = f.view({2, 4, 2, 3, 3});
  auto x = v.select(2, 0), y = v.select(2, 1);
  auto turned = torch::stack({x * std::cos(phi) - y * std::sin(phi), x * std::sin(phi) + y * std::cos(phi)}, 2)
                    .reshape({2, 8, 3, 3});
  const auto [inv, u] = canonicalize_tokens(f);
  const auto [inv_t, u_t] = canonicalize_tokens(turned);
  EXPECT_EQ(inv.sizes(), torch::IntArrayRef({2, 9, 7}));
  EXPECT_LT(max_diff(inv, inv_t), 1e-5);
  auto dphi = torch::atan2(u_t.select(-1, 1), u_t.select(-1, 0)) - torch::atan2(u.select(-1, 1), u.select(-1, 0));
  auto wrapped = torch::remainder(dphi - phi + M_PI, 2 * M_PI) - M_PI;
  EXPECT_LT(wrapped.abs().max().item<double>(), 1e-5);
}

TEST(Canonicalize, FirstInvariantIsLength) {
  auto f = torch::zeros({1, 4, 1, 1});
  f[0][0][0][0] = 3.0;
  f[0][1][0][0] = 4.0;
  f[0][2][0][0] = 0.0;
  f[0][3][0][0] = 2.0;
  const auto [inv, u] = canonicalize_tokens(f);
  EXPECT_NEAR(inv[0][0][0].item<double>(), 5.0, 1e-6);
  // (0, 2) in the frame with x axis (0.6, 0.8): (1.6, 1.2)
  EXPECT_NEAR(inv[0][0][1].item<double>(), 1.6, 1e-6);
  EXPECT_NEAR(inv[0][0][2].item<double>(), 1.2, 1e-6);
  EXPECT_NEAR(u[0][0][0].item<double>(), 0.6, 1e-6);
  EXPECT_NEAR(u[0][0][1].item<double>(), 0.8, 1e-6);
}

TEST(MatchTransform, ShapesAndSwapSymmetry) {
  torch::NoGradGuard guard;
  torch::manual_seed(4);
  Matcher m(small_matcher(true));
  auto a = torch::randn({2, 8, 4, 4}), b = torch::randn({2, 8, 4, 4});
  const auto [x, y] = m->match_transform(a, b);
  EXPECT_EQ(x.sizes(), torch::IntArrayRef({2, 16, 16}));
  const auto [y2, x2] = m->match_transform(b, a);
  EXPECT_LT(max_diff(x, x2), 1e-5);
  EXPECT_LT(max_diff(y, y2), 1e-5);
}

TEST(MatchTransform, PermutationEquivariantWithoutPositionalEncoding) {
  torch::NoGradGuard guard;
  torch::manual_seed(5);
  Matcher m(small_matcher(false));
  auto a = torch::randn({1, 8, 4, 4}), b = torch::randn({1, 8, 4, 4});
  auto perm_a = torch::randperm(16), perm_b = torch::randperm(16);
  auto permute = [](const torch::Tensor& f, const torch::Tensor& p) {
    return f.view({1, 8, 16}).index_select(2, p).view({1, 8, 4, 4});
  };
  const auto [x, y] = m->match_transform(a, b);
  const auto [xp, yp] = m->match_transform(permute(a, perm_a), permute(b, perm_b));
  EXPECT_LT(max_diff(xp, x.index_select(1, perm_a)), 1e-5);
  EXPECT_LT(max_diff(yp, y.index_select(1, perm_b)), 1e-5);
}

TEST(MatchTransform, RejectsShapeMismatch) {
  Matcher m(small_matcher(true));
  EXPECT_THROW(m->match_transform(torch::randn({1, 8, 4, 4}), torch::randn({2, 8, 4, 4})), ConfigError);
  EXPECT_THROW(m->match_transform(torch::randn({1, 6, 4, 4}), torch::randn({1, 6, 4, 4})), ConfigError);
}

TEST(Head, OrientationNormalization) {
  auto raw = torch::tensor({2.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f}).view({1, 6});
  auto o = head::orientation(raw);
  EXPECT_NEAR(o[0][0].item<double>(), 1.0, 1e-7);
  EXPECT_NEAR(o[0][1].item<double>(), 0.0, 1e-7);
  EXPECT_NEAR(*head::angle(2.0, 0.0), M_PI / 2.0, 1e-12);
  EXPECT_FALSE(head::angle(0.0, 0.0).has_value());
}

TEST(Head, ScaleAndRefineChannels) {
  auto raw = torch::tensor({0.0f, 1.0f, 0.0f, 50.0f, -50.0f, 0.0f}).view({1, 6});
  EXPECT_EQ(std::pow(1.5, head::scale_exponent(raw)[0].item<double>()), 1.0);
  auto r = head::refine(raw);
  EXPECT_NEAR(r[0][0].item<double>(), 0.5, 1e-6);
  EXPECT_NEAR(r[0][1].item<double>(), -0.5, 1e-6);
  auto random = head::refine(torch::randn({100, 6}) * 10);
  EXPECT_LE(random.abs().max().item<double>(), 0.5);
}

TEST(Head, RelativeOrientationIsFixedMinusMoving) {
  torch::manual_seed(6);
  auto hm = torch::randn({1, 3, 6}, torch::kFloat64), hf = torch::randn({1, 4, 6}, torch::kFloat64);
  auto rel = head::relative_orientation(hm, hf);
  ASSERT_EQ(rel.sizes(), torch::IntArrayRef({1, 3, 4, 2}));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 4; ++j) {
      const double am = std::atan2(hm[0][i][0].item<double>(), hm[0][i][1].item<double>());
      const double af = std::atan2(hf[0][j][0].item<double>(), hf[0][j][1].item<double>());
      EXPECT_NEAR(rel[0][i][j][0].item<double>(), std::sin(af - am), 1e-12);
      EXPECT_NEAR(rel[0][i][j][1].item<double>(), std::cos(af - am), 1e-12);
    }
  }
}

TEST(ScoreMatrix, OrthogonalTokensPeakOnDiagonal) {
  auto a = torch::eye(6).unsqueeze(0) * 2.0;
  auto s = score_matrix(a, a, 0.5);
  EXPECT_TRUE(torch::equal(std::get<1>(s[0].max(1)), torch::arange(6)));
  EXPECT_NEAR(s[0][2][2].item<double>(), 8.0, 1e-6);
}

TEST(ScoreMatrix, BilinearAndZero) {
  torch::manual_seed(7);
  auto a = torch::randn({1, 5, 8}), b = torch::randn({1, 7, 8});
  EXPECT_LT(max_diff(score_matrix(a * 3, b * 3, 1.0), score_matrix(a, b, 1.0) * 9), 1e-4);
  EXPECT_EQ(score_matrix(torch::zeros({1, 3, 4}), torch::zeros({1, 3, 4}), 1.0).abs().max().item<double>(), 0.0);
  EXPECT_THROW(score_matrix(a, b, 0.0), ConfigError);
  EXPECT_THROW(score_matrix(a, b, -1.0), ConfigError);
}

TEST(Matcher, ForwardShapesAndMatchabilityColumn) {
  torch::NoGradGuard guard;
  torch::manual_seed(8);
  Matcher m(small_matcher(true));
  auto a = torch::randn({2, 8, 4, 4}), b = torch::randn({2, 8, 4, 4});
  const MatcherOutput out = m->forward(a, b);
  EXPECT_EQ(out.head_moving.sizes(), torch::IntArrayRef({2, 16, 6}));
  EXPECT_EQ(out.scores.sizes(), torch::IntArrayRef({2, 16, 16}));
  auto plain = score_matrix(out.moving, out.fixed, m->config().effective_temperature());
  auto added = out.scores - plain;
  // Constant down each column, equal to the fixed token's matchability.
  EXPECT_LT(max_diff(added, added.select(1, 0).unsqueeze(1).expand_as(added)), 1e-4);
  EXPECT_LT(max_diff(added.select(1, 0), out.head_fixed.select(2, head::kMatchability)), 1e-4);
}

TEST(Matcher, HeadAngleFollowsTokenOrientation) {
  // With the orientation embedding zeroed the tokens only see invariants, so turning
  // every fixed vector by phi shifts each relative head angle by exactly -phi.
  torch::NoGradGuard guard;
  torch::manual_seed(9);
  Matcher m(small_matcher(false));
  for (auto& p : m->named_parameters()) {
    if (p.key().rfind("orientation_proj", 0) == 0) p.value().zero_();
  }
  auto a = torch::randn({1, 8, 4, 4}), b = torch::randn({1, 8, 4, 4});
  const double phi = 0.9;
  auto v = b.view({1, 4, 2, 4, 4});
  auto x = v.select(2, 0), y = v.select(2, 1);
  auto bt = torch::stack({x * std::cos(phi) - y * std::sin(phi), x * std::sin(phi) + y * std::cos(phi)}, 2)
                .reshape({1, 8, 4, 4});
  auto rel = head::relative_orientation(m->forward(a, b).head_moving, m->forward(a, b).head_fixed);
  auto rel_t = head::relative_orientation(m->forward(a, bt).head_moving, m->forward(a, bt).head_fixed);
  auto ang = torch::atan2(rel.select(-1, 0), rel.select(-1, 1));
  auto ang_t = torch::atan2(rel_t.select(-1, 0), rel_t.select(-1, 1));
  auto d = torch::remainder(ang_t - ang + phi + M_PI, 2 * M_PI) - M_PI;
  EXPECT_LT(d.abs().max().item<double>(), 1e-4);
}
