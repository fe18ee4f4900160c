#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rotir/assignment.hpp"
#include "rotir/config.hpp"
#include "rotir/datasynth.hpp"
#include "rotir/losses.hpp"
#include "rotir/metrics.hpp"
#include "rotir/model.hpp"

namespace rotir {

/// (1, 1, H, W) float tensor copy of an image.
torch::Tensor to_tensor(const Image& img);

/// Axis-aligned pixel rectangle [x, x + w) x [y, y + h).
struct Rect {
  int x = 0, y = 0, w = 0, h = 0;
};

Rect parse_rect(const std::string& text);  // "x,y,w,h"
/// Bounding box of the nonzero pixels; throws on an empty mask.
Rect bounding_rect(const BinaryMask& mask);
/// Bounding box of the largest Otsu foreground component.
Rect auto_rect(const Image& img);

/// (L) bool validity: a token is excluded when its patch lies wholly outside `rect`.
torch::Tensor apply_rectangle_mask(const Rect& rect, const PatchGrid& grid);

/// Rows of invalid moving tokens and columns of invalid fixed tokens are pushed far
/// below any real score so their mass goes to the dustbins.
torch::Tensor mask_scores(const torch::Tensor& scores, const torch::Tensor& valid_moving,
                          const torch::Tensor& valid_fixed);

struct TrainBatch {
  torch::Tensor moving, fixed;  // (B, 1, H, W)
  torch::Tensor target;         // (B, L + 1, L + 1)
  torch::Tensor pairs;          // (B, L, L) real block of target
  torch::Tensor refine;         // (B, L, 2) per fixed token
  torch::Tensor matched;        // (B, L) fixed token has a gt partner
  torch::Tensor theta, scale;   // (B)
  torch::Tensor valid_moving, valid_fixed;  // (B, L); undefined without rectangle masks
};

/// Stacks samples. With rectangle masks, gt pairs touching an excluded token are
/// moved to the dustbins so the target stays reachable.
TrainBatch make_batch(std::span<const TrainingSample> samples, const Config& config);

struct LossReport {
  double total = 0.0, conf = 0.0, angle = 0.0, refine = 0.0, scale = 0.0;
};

/// Forward pass, masking, Sinkhorn and every loss term of one batch.
torch::Tensor batch_loss(RotirModel& model, const TrainBatch& batch, const Config& config, LossReport* report = nullptr);

struct EpochReport {
  int epoch = 0;
  LossReport mean;
  double seconds = 0.0;
};

struct TrainState {
  int epoch = 0;
  std::uint64_t seed = 0;
  std::vector<EpochReport> history;
};

using SampleLoader = std::function<TrainingSample(int)>;

/// Adam training over `count` samples. After every epoch writes model.ckpt,
/// optimizer.pt, config.txt and loss_history.txt into `out_dir` (when non-empty).
/// A non-finite loss aborts with NumericalError, leaving the last good checkpoint.
TrainState train(RotirModel& model, const Config& config, const SampleLoader& loader, int count,
                 const std::filesystem::path& out_dir, const std::function<void(const EpochReport&)>& on_epoch = {});

/// Builds a seeded model and trains it on a dataset directory.
TrainState train_from_directory(const Config& config, const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_dir,
                                const std::function<void(const EpochReport&)>& on_epoch = {});

struct RegisterOptions {
  VariantConfig variant;
  std::optional<Rect> rect_moving;  // in input pixel coordinates; auto_rect when absent
  std::optional<Rect> rect_fixed;
  double threshold = 0.2;
  int iterations = 200;
};

struct RegistrationResult {
  SimilarityTransform transform;  // moving -> fixed, input pixel coordinates
  MatchSet matches;               // in model (resized) coordinates
  Image warped;                   // moving resampled into the fixed frame
  RgbImage overlay;               // fixed in magenta, warped moving in green
  RgbImage match_view;            // moving | fixed with match lines
  bool failed = false;
  std::string failure;
};

RegisterOptions default_register_options(const Config& config);

/// Resamples both images to the model size (the factors are folded back into the
/// transform), runs the model, extracts matches and estimates the transform. An empty
/// or degenerate match set returns the identity with `failed` set.
RegistrationResult register_images(RotirModel& model, const Config& config, const Image& moving, const Image& fixed,
                                   const RegisterOptions& options, bool render = true);

struct EvalRow {
  int pair_id = 0;
  std::string variant;
  int rotation = 0;  // degrees applied to the moving image
  double dice = 0.0;
  double cw_ssim = 0.0;
  double angle_residual_deg = 0.0;  // detected - applied - gt, NaN when registration failed
  double scale = 1.0;               // of the reported transform
  bool failed = false;
};

struct MeanStd {
  double mean = 0.0, std = 0.0;
};
MeanStd mean_std(std::span<const double> values);

struct RegistrationReport {
  std::string variant;
  std::vector<EvalRow> rows;
  MeanStd dice, cw_ssim;
  RobustnessSummary robustness;
  int failures = 0;
};

/// Four-rotation protocol over the first `max_pairs` samples (all when <= 0).
RegistrationReport evaluate(RotirModel& model, const Config& config, const SampleLoader& loader, int count,
                            const RegisterOptions& options, int max_pairs = 0, bool with_cw_ssim = true);

void write_report_csv(const std::filesystem::path& path, const RegistrationReport& report);
void write_robustness_csv(const std::filesystem::path& path, const RegistrationReport& report);
/// Aggregate table: variant, DICE mean +- std, CW-SSIM mean +- std, rotation std.
std::string format_aggregate(const RegistrationReport& report);

}  // namespace rotir
