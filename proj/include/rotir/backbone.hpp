#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rotir/equivariant.hpp"

namespace rotir {

struct BackboneConfig {
  int input_size = 256;
  int grid_size = 16;
  bool use_upsampling = false;
  std::vector<int> widths{2, 4, 8, 8};  // regular multiplicities of the stride-2 stages
  int group_order = 8;
  int lift_kernel = 5;
  int kernel = 3;

  int patch_px() const { return input_size / grid_size; }
  int out_channels() const { return use_upsampling ? 24 : 8; }
  void validate() const;
};

/// Steerable convolution -> field batch norm -> ReLU.
class BasicBlockImpl : public torch::nn::Module {
 public:
  BasicBlockImpl(FieldType in, FieldType out, int kernel_size);
  FeatureField forward(const FeatureField& x, int stride);

 private:
  SteerableKernel conv_{nullptr};
  FieldBatchNorm norm_{nullptr};
};
TORCH_MODULE(BasicBlock);

/// 2x2 space-to-depth. Output channel (dy * 2 + dx) * C + c, so each cell stays a
/// contiguous copy of the input channels (row-major within the cell).
torch::Tensor space_to_depth(const torch::Tensor& x);
torch::Tensor depth_to_space(const torch::Tensor& x);

class BackboneImpl : public torch::nn::Module {
 public:
  explicit BackboneImpl(BackboneConfig config);

  /// Images (B, 1, H, W) -> match features (B, C, S, S), C = 8 or 24.
  torch::Tensor forward(const torch::Tensor& images);

  /// Returns the 4-vector-field output and the deep S x S regular field it was read from.
  std::pair<FeatureField, FeatureField> downsample_path(const FeatureField& image);
  /// Deep regular field (S x S) -> (B, 16, S, S).
  torch::Tensor upsample_path(const FeatureField& deep);

  const BackboneConfig& config() const { return config_; }
  /// Every steerable block in order, for layer-wise equivariance checks.
  std::vector<BasicBlock> blocks() const;

 private:
  BackboneConfig config_;
  torch::nn::ModuleList down_;
  SteerableKernel down_head_{nullptr};
  BasicBlock up1_{nullptr}, up2_{nullptr};
  SteerableKernel up_head_{nullptr};
  torch::Tensor up_bias_;
};
TORCH_MODULE(Backbone);

struct EquivarianceResidual {
  std::string layer;
  double max_abs = 0.0;
};

/// Largest |L(rotate(x, j)) - rotate(L(x), j)| over `trials` random inputs and
/// j = 1, 2, 3 for every block, the down path and the full feature output. The
/// backbone is evaluated in eval mode.
std::vector<EquivarianceResidual> equivariance_residuals(Backbone& backbone, int trials, std::uint64_t seed);

}  // namespace rotir
