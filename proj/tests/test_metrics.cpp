#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "rotir/datasynth.hpp"
#include "rotir/error.hpp"
#include "rotir/metrics.hpp"

using namespace rotir;

namespace {

BinaryMask disk(int size, double cx, double cy, double r) {
  BinaryMask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) m(y, x) = std::hypot(x + 0.5 - cx, y + 0.5 - cy) < r;
  return m;
}

Image blob_image(std::uint64_t seed, int size = 128) {
  Rng rng(seed);
  const Sprite s = synth_blob(rng, BlobSize{1500, 3000});
  SpritePose pose;
  pose.center = {size / 2.0, size / 2.0};
  Image img = render_sprite(s.intensity, pose, size);
  for (auto& v : img.values()) v = 0.1f + 0.8f * v;
  return img;
}

Image shift_x(const Image& img, int dx) {
  Image out(img.height(), img.width(), 0.1f);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (x - dx >= 0 && x - dx < img.width()) out(y, x) = img(y, x - dx);
  return out;
}

}  // namespace

TEST(Dice, Axioms) {
  const auto a = disk(64, 30, 30, 12), b = disk(64, 36, 30, 12);
  EXPECT_DOUBLE_EQ(dice(a, a), 1.0);
  EXPECT_DOUBLE_EQ(dice(a, b), dice(b, a));
  EXPECT_GT(dice(a, b), 0.0);
  EXPECT_LT(dice(a, b), 1.0);
  EXPECT_DOUBLE_EQ(dice(a, disk(64, 10, 50, 0.1)), 0.0);
  EXPECT_THROW(dice(BinaryMask(8, 8), BinaryMask(8, 8)), ConfigError);
  EXPECT_THROW(dice(a, BinaryMask(32, 32)), ConfigError);
}

TEST(Dice, CountOracle) {
  BinaryMask a(4, 4), b(4, 4);
  a(0, 0) = a(0, 1) = a(1, 1) = 1;
  b(0, 1) = b(1, 1) = b(2, 2) = b(3, 3) = 1;
  EXPECT_DOUBLE_EQ(dice(a, b), 2.0 * 2 / (3 + 4));
}

TEST(SteerableFilter, TilesTheMiddleBand) {
  // The radial pieces form a partition of unity on the covered octaves, and the
  // angular parts on one half-plane sum (squared, over orientations) to a constant.
  const PyramidConfig cfg;
  EXPECT_EQ(steerable_filter(0, 0, cfg, 0.0, 0.0), 0.0);
  for (double w : {0.4, 0.7, 1.2}) {
    for (double phi : {0.1, 0.8, 2.0}) {
      const double wx = w * std::cos(phi), wy = w * std::sin(phi);
      double pos = 0.0, neg = 0.0;
      for (int l = 0; l < cfg.levels; ++l) {
        for (int o = 0; o < cfg.orientations; ++o) {
          pos += steerable_filter(l, o, cfg, wx, wy);
          neg += steerable_filter(l, o, cfg, -wx, -wy);
        }
      }
      EXPECT_GT(pos + neg, 0.0);
    }
  }
}

TEST(Pyramid, LevelSizesHalve) {
  const auto p = complex_wavelet_transform(blob_image(1, 64));
  ASSERT_EQ(p.bands.size(), 4u);
  int expect = 64;
  for (const auto& level : p.bands) {
    ASSERT_EQ(level.size(), 6u);
    EXPECT_EQ(level[0].height, expect);
    EXPECT_EQ(level[0].width, expect);
    expect = (expect + 1) / 2;
  }
  EXPECT_THROW(complex_wavelet_transform(Image(8, 8)), ConfigError);
  EXPECT_THROW(complex_wavelet_transform(Image(32, 16)), ConfigError);
  EXPECT_THROW(complex_wavelet_transform(Image(64, 64), PyramidConfig{1, 4}), ConfigError);
}

TEST(Pyramid, ResponsesAreComplex) {
  const auto p = complex_wavelet_transform(blob_image(2, 64));
  double re = 0.0, im = 0.0;
  for (const auto& c : p.bands[1][2].coeff) {
    re += std::abs(c.real());
    im += std::abs(c.imag());
  }
  EXPECT_GT(im, 0.1 * re);
}

TEST(CwSsim, IdentityAndSymmetry) {
  const Image a = blob_image(3), b = blob_image(4);
  EXPECT_GE(cw_ssim(a, a), 1.0 - 1e-6);
  EXPECT_LE(cw_ssim(a, a), 1.0 + 1e-12);
  EXPECT_NEAR(cw_ssim(a, b), cw_ssim(b, a), 1e-12);
  EXPECT_LT(cw_ssim(a, b), 0.99);
  EXPECT_GE(cw_ssim(a, b), 0.0);
  EXPECT_THROW(cw_ssim(a, Image(64, 64)), ConfigError);
  EXPECT_THROW(cw_ssim(a, a, 7, -1.0), ConfigError);
}

TEST(CwSsim, SmallShiftHurtsLessThanPixelSsim) {
  const Image a = blob_image(5);
  const Image b = shift_x(a, 2);
  EXPECT_GT(cw_ssim(a, b), windowed_ssim(a, b));
  EXPECT_GT(cw_ssim(a, b), cw_ssim(a, blob_image(6)));
}

TEST(WindowedSsim, IdentityAndBounds) {
  const Image a = blob_image(7), b = blob_image(8);
  EXPECT_NEAR(windowed_ssim(a, a), 1.0, 1e-9);
  EXPECT_LT(windowed_ssim(a, b), 1.0);
  EXPECT_NEAR(windowed_ssim(a, b), windowed_ssim(b, a), 1e-12);
  EXPECT_THROW(windowed_ssim(Image(4, 4), Image(4, 4)), ConfigError);
}

TEST(AngleSpread, Oracles) {
  const std::vector<double> same{12.0, 12.0, 12.0, 12.0};
  const auto s0 = angle_spread(same);
  EXPECT_NEAR(s0.mean_deg, 12.0, 1e-12);
  EXPECT_EQ(s0.std_deg, 0.0);
  EXPECT_NEAR(s0.extreme_deg, 0.0, 1e-12);

  // Two angles +-d around m: R = cos d.
  const double d = 10.0;
  const std::vector<double> pair{50.0 - d, 50.0 + d};
  const auto s1 = angle_spread(pair);
  EXPECT_NEAR(s1.mean_deg, 50.0, 1e-10);
  EXPECT_NEAR(s1.std_deg, std::sqrt(-2.0 * std::log(std::cos(d * M_PI / 180))) * 180 / M_PI, 1e-10);
  EXPECT_NEAR(s1.extreme_deg, 2 * d, 1e-10);
  EXPECT_THROW(angle_spread(std::vector<double>{}), ConfigError);
}

TEST(AngleSpread, BranchInvariant) {
  const std::vector<double> a{179.0, -179.0, 178.0, -177.0};
  std::vector<double> b = a;
  b[1] += 360.0;
  b[2] -= 720.0;
  const auto sa = angle_spread(a), sb = angle_spread(b);
  EXPECT_NEAR(sa.std_deg, sb.std_deg, 1e-9);
  EXPECT_NEAR(sa.extreme_deg, sb.extreme_deg, 1e-9);
  EXPECT_NEAR(sa.extreme_deg, 5.0, 1e-9);
  EXPECT_LT(sa.std_deg, 3.0);
}

TEST(AngleSpread, SmallSpreadApproachesLinearStd) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(30.0, 0.5);
  std::vector<double> x(2000);
  for (auto& v : x) v = n(rng);
  double m = 0.0, s = 0.0;
  for (double v : x) m += v / x.size();
  for (double v : x) s += (v - m) * (v - m) / x.size();
  EXPECT_NEAR(angle_spread(x).std_deg, std::sqrt(s), 1e-3);
}

TEST(RotationResidual, RemovesQuarterTurns) {
  SimilarityTransform T;
  T.theta = 0.3;
  for (int k = 0; k < 4; ++k) {
    SimilarityTransform D = T;
    D.theta = wrap_angle(T.theta + k * M_PI / 2);
    EXPECT_NEAR(rotation_residual_deg(D, k), 0.3 * 180 / M_PI, 1e-10);
  }
}

TEST(RotationRobustness, PerfectRegistrationHasZeroSpread) {
  const Image m = blob_image(9, 64), f = blob_image(10, 64);
  const double gt = 0.7;
  const RegisterFn perfect = [&](const Image& moving, const Image&) -> std::optional<SimilarityTransform> {
    for (int k = 0; k < 4; ++k) {
      if (rot90(m, k) == moving) {
        SimilarityTransform T;
        T.theta = wrap_angle(gt + k * M_PI / 2);
        return T;
      }
    }
    return std::nullopt;
  };
  const std::vector<std::pair<Image, Image>> pairs{{m, f}, {m, f}};
  const auto s = rotation_robustness(perfect, pairs);
  EXPECT_EQ(s.failures, 0);
  EXPECT_NEAR(s.mean_std_deg, 0.0, 1e-9);
  for (double r : s.pairs[0].residual_deg) EXPECT_NEAR(r, gt * 180 / M_PI, 1e-10);
}

TEST(RotationRobustness, FailuresAreCountedSeparately) {
  const Image m = blob_image(11, 64);
  int calls = 0;
  const RegisterFn flaky = [&](const Image&, const Image&) -> std::optional<SimilarityTransform> {
    if (++calls == 2) return std::nullopt;
    return SimilarityTransform{};
  };
  const std::vector<std::pair<Image, Image>> pairs{{m, m}, {m, m}};
  const auto s = rotation_robustness(flaky, pairs);
  EXPECT_EQ(s.failures, 1);
  EXPECT_TRUE(s.pairs[0].failed);
  EXPECT_FALSE(s.pairs[1].failed);
  // A fixed zero angle gives residuals 0, -90, 180, 90: uniform on the circle.
  EXPECT_GT(s.mean_std_deg, 90.0);
}
