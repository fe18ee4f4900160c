#pragma once

#include <torch/torch.h>

namespace rotir {

struct LossWeights {
  double conf = 1.0;
  double angle = 0.5;
  double refine = 0.5;
  double scale = 0.5;

  void validate() const;
  /// Copy with the scale weight pinned to 0 when scale detection is off.
  LossWeights for_scale(bool scale_enabled) const;
};

struct LossParts {
  torch::Tensor conf, angle, refine, scale;  // scalars; undefined terms count as 0
};

/// Mean negative log-probability over the entries where `target` is 1, dustbins included.
torch::Tensor confidence_loss(const torch::Tensor& log_probs, const torch::Tensor& target);

/// Mean over `mask` of |normalize(pred) - (sin gt, cos gt)|^2. `pred` is (..., 2) as
/// (sin, cos); `theta` broadcasts against pred's leading shape. Empty mask gives 0.
torch::Tensor angle_loss(const torch::Tensor& pred, const torch::Tensor& theta, const torch::Tensor& mask);

/// Mean over `mask` of the per-token mean squared offset error (patch units).
torch::Tensor refinement_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mask);

/// Mean over `mask` of (1.5^p - s_gt)^2.
torch::Tensor scale_loss(const torch::Tensor& p, const torch::Tensor& scale, const torch::Tensor& mask);

/// Weighted sum. Throws NumericalError naming the first non-finite term.
torch::Tensor total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace rotir
