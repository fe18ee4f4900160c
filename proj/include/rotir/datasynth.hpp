#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <vector>

#include "rotir/geometry.hpp"
#include "rotir/image.hpp"

namespace rotir {

using Rng = std::mt19937_64;

/// Foreground object cut out of its background. Intensity is zero outside the mask.
struct Sprite {
  Image intensity;
  BinaryMask mask;
};

/// Otsu threshold of a single-channel image (level in intensity units).
float otsu_threshold(const Image& img);

/// Labels of 8-connected components of a mask; returns the component count.
int label_components(const BinaryMask& mask, std::vector<int>& labels);

/// Otsu split -> largest connected component -> tight bounding box.
Sprite crop_foreground(const Image& raw);

struct BlobSize {
  double min_area = 4000.0;  // mask area bounds in pixels
  double max_area = 9000.0;
};

/// Star-convex random blob (radius = truncated random Fourier series) with a
/// ring/spot/ridge interior texture. Deterministic given the generator state.
Sprite synth_blob(Rng& rng, const BlobSize& size = {});

/// Pose of a sprite inside a frame: sprite center lands on `center`.
struct SpritePose {
  double angle = 0.0;
  double scale = 1.0;
  Point2 center{};
};

/// Maps frame coordinates to sprite coordinates and renders bilinearly.
Image render_sprite(const Image& sprite_layer, const SpritePose& pose, int frame_size);

struct SynthesisRanges {
  bool scale_enabled = false;
  double scale_max = 1.15;  // log-uniform in [1/scale_max, scale_max]
  double noise_sigma = 0.02;
  double background_min = 0.05;
  double background_max = 0.15;
  double margin_px = 2.0;
  int frame_size = 256;
  int max_retries = 64;
};

/// Per-pair ground truth. `fixed_of_moving[i] == -1` means moving token i goes to the dustbin.
struct GroundTruthMap {
  int tokens = 0;
  std::vector<int> fixed_of_moving;
  std::vector<int> moving_of_fixed;
  std::vector<Point2> refine;  // per fixed token, patch units; zero when unmatched

  int matched_count() const;
  /// Dense (tokens + 1) x (tokens + 1) binary target; last row/column is the dustbin.
  std::vector<std::uint8_t> dense() const;
};

GroundTruthMap gt_matching_map(const SimilarityTransform& T, const BinaryMask& fg_moving,
                               const PatchGrid& grid, double min_fraction = 0.3);

struct TrainingSample {
  std::uint64_t seed = 0;
  Image moving;
  Image fixed;
  SimilarityTransform gt_transform;  // moving -> fixed, centered on the frame center
  BinaryMask fg_moving;
  BinaryMask fg_fixed;
  GroundTruthMap gt;
};

/// Random transform drawn from `ranges` (centered on the frame center). Translation
/// is chosen so a sprite of radius `radius` at `moving_center` stays inside the frame.
SimilarityTransform sample_transform(Rng& rng, const SynthesisRanges& ranges, Point2 moving_center,
                                     double radius);

/// Places the sprite at a random pose in the moving frame, draws T, renders the fixed
/// frame at the composed pose, adds background and noise, and computes ground truth.
TrainingSample synth_pair(const Sprite& sprite, const SynthesisRanges& ranges, Rng& rng,
                          const PatchGrid& grid = {});

/// Renders a pair for an explicit moving pose and transform (one background level,
/// independent noise per frame).
TrainingSample render_with_transform(const Sprite& sprite, const SpritePose& moving_pose,
                                     const SimilarityTransform& T, double background,
                                     double noise_sigma, Rng& rng, const PatchGrid& grid = {});

/// Blob + pair from a single seed.
TrainingSample synth_sample(std::uint64_t seed, const SynthesisRanges& ranges,
                            const BlobSize& size = {}, const PatchGrid& grid = {});

/// One line per sample in `metadata.txt`: `seed theta scale tx ty`.
struct SampleRecord {
  std::uint64_t seed = 0;
  double theta = 0.0;
  double scale = 1.0;
  double tx = 0.0;
  double ty = 0.0;
};

/// Writes `n` samples: NNNNN_moving.png, NNNNN_fixed.png, NNNNN_moving_mask.png,
/// NNNNN_fixed_mask.png and metadata.txt.
void write_dataset(const std::filesystem::path& dir, int n, std::uint64_t seed,
                   const SynthesisRanges& ranges);

class Dataset {
 public:
  explicit Dataset(std::filesystem::path dir, PatchGrid grid = {});

  int size() const { return static_cast<int>(records_.size()); }
  const SampleRecord& record(int k) const { return records_.at(k); }
  /// Loads images and masks of sample k and regenerates its ground-truth map.
  TrainingSample load(int k) const;

 private:
  std::filesystem::path dir_;
  PatchGrid grid_;
  std::vector<SampleRecord> records_;
};

std::filesystem::path sample_path(const std::filesystem::path& dir, int k, const char* suffix);

}  // namespace rotir
