#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "rotir/datasynth.hpp"
#include "rotir/error.hpp"

using namespace rotir;

namespace {

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("rotir_test_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

// Reference ground truth by brute force over all fixed tokens.
int nearest_fixed(const SimilarityTransform& T, int i, const PatchGrid& g) {
  const Point2 q = apply(T, patch_center(i, g));
  if (q.x < 0 || q.y < 0 || q.x >= g.image_size() || q.y >= g.image_size()) return -1;
  int best = -1;
  double bd = 1e300;
  for (int j = 0; j < g.count(); ++j) {
    const Point2 c = patch_center(j, g);
    const double d = std::max(std::abs(c.x - q.x), std::abs(c.y - q.y));
    if (d < bd) {
      bd = d;
      best = j;
    }
  }
  return best;
}

}  // namespace

TEST(Otsu, SeparatesTwoLevels) {
  Image img(20, 20, 0.1f);
  for (int r = 5; r < 12; ++r)
    for (int c = 3; c < 15; ++c) img(r, c) = 0.8f;
  const float t = otsu_threshold(img);
  EXPECT_GT(t, 0.1f);
  EXPECT_LE(t, 0.8f);
  EXPECT_EQ(count_nonzero(threshold(img, t)), 7u * 12u);
  EXPECT_THROW(otsu_threshold(Image(4, 4, 0.5f)), DegenerateError);
  EXPECT_THROW(otsu_threshold(Image()), ConfigError);
}

TEST(LabelComponents, DiagonalNeighboursConnect) {
  BinaryMask m(5, 5);
  m(0, 0) = m(1, 1) = m(2, 2) = 1;  // one diagonal chain
  m(0, 4) = 1;
  m(4, 0) = m(4, 1) = 1;
  std::vector<int> labels;
  EXPECT_EQ(label_components(m, labels), 3);
  EXPECT_EQ(labels[0], labels[6]);
  EXPECT_EQ(labels[6], labels[12]);
  EXPECT_NE(labels[0], labels[4]);
  EXPECT_EQ(labels[20], labels[21]);
  EXPECT_EQ(labels[1], -1);
  EXPECT_EQ(label_components(BinaryMask(3, 3), labels), 0);
}

TEST(CropForeground, KeepsLargestComponentInTightBox) {
  Image img(40, 40, 0.05f);
  for (int r = 10; r < 25; ++r)
    for (int c = 8; c < 30; ++c) img(r, c) = 0.9f;
  img(35, 35) = 0.9f;  // small speck
  const Sprite s = crop_foreground(img);
  EXPECT_EQ(s.mask.height(), 15);
  EXPECT_EQ(s.mask.width(), 22);
  EXPECT_EQ(count_nonzero(s.mask), 15u * 22u);
  EXPECT_FLOAT_EQ(s.intensity(0, 0), 0.9f);
}

TEST(CropForeground, ZeroOutsideMask) {
  Image img(30, 30, 0.0f);
  for (int r = 5; r < 20; ++r)
    for (int c = 5; c < 20; ++c)
      if ((r - 12) * (r - 12) + (c - 12) * (c - 12) < 50) img(r, c) = 0.7f;
  const Sprite s = crop_foreground(img);
  for (int r = 0; r < s.mask.height(); ++r)
    for (int c = 0; c < s.mask.width(); ++c)
      if (!s.mask(r, c)) EXPECT_EQ(s.intensity(r, c), 0.0f);
}

TEST(SynthBlob, DeterministicAndWithinArea) {
  for (int seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    const Sprite x = synth_blob(a), y = synth_blob(b);
    EXPECT_EQ(x.mask, y.mask);
    EXPECT_EQ(x.intensity, y.intensity);
    const auto area = static_cast<double>(count_nonzero(x.mask));
    EXPECT_GE(area, BlobSize{}.min_area);
    EXPECT_LE(area, BlobSize{}.max_area);
    std::vector<int> labels;
    EXPECT_EQ(label_components(x.mask, labels), 1);
  }
  Rng r(0);
  EXPECT_THROW(synth_blob(r, BlobSize{5000, 100}), ConfigError);
}

TEST(GroundTruth, MatchesBruteForceAndIsInjective) {
  const PatchGrid g{};
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto s = synth_sample(seed, SynthesisRanges{});
    const auto& gt = s.gt;
    std::set<int> used;
    for (int i = 0; i < gt.tokens; ++i) {
      const int j = gt.fixed_of_moving[i];
      if (j < 0) continue;
      EXPECT_TRUE(used.insert(j).second);
      EXPECT_EQ(gt.moving_of_fixed[j], i);
      EXPECT_EQ(j, nearest_fixed(s.gt_transform, i, g));
      const Point2 q = apply(s.gt_transform, patch_center(i, g));
      const Point2 c = patch_center(j, g);
      EXPECT_NEAR(gt.refine[j].x, (q.x - c.x) / g.patch_px, 1e-12);
      EXPECT_NEAR(gt.refine[j].y, (q.y - c.y) / g.patch_px, 1e-12);
      EXPECT_LE(std::abs(gt.refine[j].x), 0.5);
      EXPECT_LE(std::abs(gt.refine[j].y), 0.5);
    }
    for (int j = 0; j < gt.tokens; ++j) {
      if (gt.moving_of_fixed[j] >= 0) EXPECT_EQ(gt.fixed_of_moving[gt.moving_of_fixed[j]], j);
    }
    EXPECT_GT(gt.matched_count(), 0);
  }
}

TEST(GroundTruth, BackgroundTokensGoToDustbin) {
  const PatchGrid g{};
  BinaryMask fg(256, 256);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 16; ++c) fg(r, c) = 1;  // only token 0 is foreground
  const auto gt = gt_matching_map(SimilarityTransform::identity(g.image_center()), fg, g);
  EXPECT_EQ(gt.matched_count(), 1);
  EXPECT_EQ(gt.fixed_of_moving[0], 0);
  EXPECT_THROW(gt_matching_map(SimilarityTransform{}, BinaryMask(64, 64), g), ConfigError);
}

TEST(GroundTruth, MinFractionBoundary) {
  const PatchGrid g{};
  BinaryMask fg(256, 256);
  for (int r = 0; r < 16; ++r)
    for (int c = 0; c < 5; ++c) fg(r, c) = 1;  // 80 of 256 pixels
  const auto id = SimilarityTransform::identity(g.image_center());
  EXPECT_EQ(gt_matching_map(id, fg, g, 0.3).matched_count(), 1);
  EXPECT_EQ(gt_matching_map(id, fg, g, 0.32).matched_count(), 0);
}

TEST(GroundTruth, DenseTargetHasUnitMarginalsOnRealTokens) {
  const auto s = synth_sample(7, SynthesisRanges{});
  const int n = s.gt.tokens + 1;
  const auto d = s.gt.dense();
  ASSERT_EQ(d.size(), static_cast<std::size_t>(n * n));
  for (int i = 0; i < n - 1; ++i) {
    int row = 0, col = 0;
    for (int k = 0; k < n; ++k) {
      row += d[i * n + k];
      col += d[k * n + i];
    }
    EXPECT_EQ(row, 1);
    EXPECT_EQ(col, 1);
  }
  EXPECT_EQ(d[(n - 1) * n + (n - 1)], 0);
}

TEST(SynthSample, FixedMaskIsWarpedMovingMask) {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto s = synth_sample(seed, SynthesisRanges{});
    const auto warped = warp_mask(s.fg_moving, s.gt_transform);
    std::size_t diff = 0;
    for (std::size_t k = 0; k < warped.size(); ++k) diff += warped.data()[k] != s.fg_fixed.data()[k];
    // Both frames are rendered from the sprite; only boundary pixels may disagree.
    EXPECT_LT(static_cast<double>(diff), 0.05 * static_cast<double>(count_nonzero(s.fg_fixed))) << seed;
    EXPECT_EQ(s.gt_transform.scale, 1.0);
  }
}

TEST(SynthSample, ScaleRangeWhenEnabled) {
  SynthesisRanges r;
  r.scale_enabled = true;
  r.scale_max = 1.3;
  bool varied = false;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const double s = synth_sample(seed, r).gt_transform.scale;
    EXPECT_GE(s, 1.0 / 1.3 - 1e-12);
    EXPECT_LE(s, 1.3 + 1e-12);
    varied |= s != 1.0;
  }
  EXPECT_TRUE(varied);
}

TEST(SynthSample, SeedDeterminism) {
  const auto a = synth_sample(42, SynthesisRanges{});
  const auto b = synth_sample(42, SynthesisRanges{});
  EXPECT_EQ(a.moving, b.moving);
  EXPECT_EQ(a.fixed, b.fixed);
  EXPECT_EQ(a.gt.fixed_of_moving, b.gt.fixed_of_moving);
  EXPECT_NE(a.moving, synth_sample(43, SynthesisRanges{}).moving);
}

TEST(Dataset, RoundTripThroughDisk) {
  const auto dir = scratch_dir("dataset");
  write_dataset(dir, 3, 11, SynthesisRanges{});
  const Dataset ds(dir);
  ASSERT_EQ(ds.size(), 3);
  for (int k = 0; k < 3; ++k) {
    const auto s = ds.load(k);
    const auto ref = synth_sample(ds.record(k).seed, SynthesisRanges{});
    EXPECT_EQ(s.gt_transform.theta, ref.gt_transform.theta);
    EXPECT_EQ(s.gt_transform.t.x, ref.gt_transform.t.x);
    EXPECT_EQ(s.fg_moving, ref.fg_moving);
    EXPECT_EQ(s.fg_fixed, ref.fg_fixed);
    EXPECT_EQ(s.gt.fixed_of_moving, ref.gt.fixed_of_moving);
    float worst = 0.0f;
    for (std::size_t p = 0; p < s.moving.size(); ++p) {
      worst = std::max(worst, std::abs(s.moving.data()[p] - std::clamp(ref.moving.data()[p], 0.0f, 1.0f)));
    }
    EXPECT_LT(worst, 1e-4f);  // 16-bit quantization
  }
  std::filesystem::remove_all(dir);
}

TEST(Dataset, SeedsDoNotOverlap) {
  const auto a = scratch_dir("seed_a"), b = scratch_dir("seed_b");
  write_dataset(a, 5, 1, SynthesisRanges{});
  write_dataset(b, 5, 2, SynthesisRanges{});
  std::set<std::uint64_t> seeds;
  for (const auto& d : {a, b}) {
    const Dataset ds(d);
    for (int k = 0; k < ds.size(); ++k) seeds.insert(ds.record(k).seed);
  }
  EXPECT_EQ(seeds.size(), 10u);
  std::filesystem::remove_all(a);
  std::filesystem::remove_all(b);
}

TEST(Dataset, MissingDirectoryIsConfigError) {
  EXPECT_THROW(Dataset(scratch_dir("missing")), ConfigError);
  EXPECT_THROW(write_dataset(scratch_dir("zero"), 0, 1, SynthesisRanges{}), ConfigError);
}
