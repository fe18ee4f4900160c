#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <string>

#include "rotir/backbone.hpp"
#include "rotir/config.hpp"
#include "rotir/matcher.hpp"

namespace rotir {

/// Shared (Siamese) backbone and matcher plus the learnable dustbin score.
class RotirModelImpl : public torch::nn::Module {
 public:
  explicit RotirModelImpl(const Config& config);

  /// Images (B, 1, H, W) for both frames.
  MatcherOutput forward(const torch::Tensor& moving, const torch::Tensor& fixed);

  Backbone backbone{nullptr};
  Matcher matcher{nullptr};
  torch::Tensor alpha;
};
TORCH_MODULE(RotirModel);

/// Checkpoint container: magic "ROTIRCKP", format version, the config text, then every
/// named parameter and buffer as (name, dtype, shape, raw little-endian data).
void save_checkpoint(const std::filesystem::path& path, RotirModel& model, const Config& config);

struct LoadedModel {
  Config config;
  RotirModel model{nullptr};
};

/// Rebuilds the model from the stored config and loads every tensor; the model is
/// returned in eval mode.
LoadedModel load_checkpoint(const std::filesystem::path& path);

}  // namespace rotir
