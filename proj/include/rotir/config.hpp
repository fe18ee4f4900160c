#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rotir/backbone.hpp"
#include "rotir/geometry.hpp"
#include "rotir/losses.hpp"
#include "rotir/matcher.hpp"

namespace rotir {

/// Variant letters: up-sampling path, scale detection, rectangle mask, and a trailing
/// '*' when coordinate refinement is skipped at inference. "FFT" = no up-sampling,
/// no scale, rectangle mask on, refinement on.
struct VariantConfig {
  bool use_upsampling = false;
  bool scale_detection = false;
  bool rectangle_mask = true;
  bool refine_at_inference = true;

  static VariantConfig parse(const std::string& letters);
  std::string name() const;
};

struct Config {
  VariantConfig variant;

  // backbone
  int group_order = 8;
  std::vector<int> widths{2, 4, 8, 8};
  int lift_kernel = 5;
  int kernel = 3;
  int grid_size = 16;
  int input_size = 256;

  // matcher
  int model_width = 64;
  int heads = 4;
  int blocks = 2;
  bool positional_encoding = true;
  double temperature = 0.0;  // <= 0 selects 0.1 * model_width

  // assignment
  double alpha_init = 1.0;
  int sinkhorn_iters_train = 100;
  int sinkhorn_iters_infer = 200;
  double match_threshold = 0.2;

  // training
  double lr = 1e-3;
  int epochs = 20;
  int batch_size = 8;
  std::uint64_t seed = 0;
  LossWeights weights;
  double min_fraction = 0.3;
  int threads = 0;  // 0 keeps the torch default

  BackboneConfig backbone() const;
  MatcherConfig matcher() const;
  PatchGrid grid() const { return {grid_size, input_size / grid_size}; }
  void validate() const;

  /// `key = value` lines; '#' starts a comment. Unknown keys are rejected.
  static Config parse(const std::string& text);
  static Config load(const std::filesystem::path& path);
  std::string to_text() const;
};

}  // namespace rotir
