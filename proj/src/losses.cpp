#include "rotir/losses.hpp"

#include <cmath>
#include <iostream>

#include "rotir/error.hpp"

namespace rotir {

namespace F = torch::nn::functional;

void LossWeights::validate() const {
  if (!(conf > 0.0)) throw ConfigError("confidence loss weight must be positive");
  if (angle < 0.0 || refine < 0.0 || scale < 0.0) throw ConfigError("loss weights must be non-negative");
}

LossWeights LossWeights::for_scale(bool scale_enabled) const {
  LossWeights w = *this;
  if (!scale_enabled) w.scale = 0.0;
  return w;
}

namespace {

torch::Tensor masked_mean(const torch::Tensor& per_item, const torch::Tensor& mask, const char* name) {
  const auto w = mask.to(per_item.scalar_type());
  const auto count = w.sum();
  if (count.item<double>() <= 0.0) {
    static bool warned = false;
    if (!warned) {
      std::clog << "warning: " << name << " loss has no matched tokens, contributing 0\n";
      warned = true;
    }
    return (per_item * 0.0).sum();
  }
  return (per_item * w).sum() / count;
}

}  // namespace

torch::Tensor confidence_loss(const torch::Tensor& log_probs, const torch::Tensor& target) {
  if (!log_probs.sizes().equals(target.sizes())) throw ConfigError("assignment and target shapes differ");
  const auto t = target.to(log_probs.scalar_type());
  const auto count = t.sum();
  if (count.item<double>() <= 0.0) throw ConfigError("ground-truth assignment has no entries");
  return -(log_probs * t).sum() / count;
}

torch::Tensor angle_loss(const torch::Tensor& pred, const torch::Tensor& theta, const torch::Tensor& mask) {
  const auto unit = F::normalize(pred, F::NormalizeFuncOptions().dim(-1).eps(1e-12));
  const auto th = theta.to(pred.scalar_type());
  const auto err = (unit.select(-1, 0) - torch::sin(th)).square() + (unit.select(-1, 1) - torch::cos(th)).square();
  return masked_mean(err, mask.expand_as(err), "angle");
}

torch::Tensor refinement_loss(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mask) {
  if (!pred.sizes().equals(target.sizes())) throw ConfigError("refinement prediction and target shapes differ");
  return masked_mean((pred - target).square().mean(-1), mask, "refinement");
}

torch::Tensor scale_loss(const torch::Tensor& p, const torch::Tensor& scale, const torch::Tensor& mask) {
  const auto err = (torch::pow(1.5, p) - scale.to(p.scalar_type())).square();
  return masked_mean(err, mask.expand_as(err), "scale");
}

torch::Tensor total_loss(const LossParts& parts, const LossWeights& weights) {
  struct Term {
    const char* name;
    const torch::Tensor& value;
    double weight;
  };
  const Term terms[] = {{"confidence", parts.conf, weights.conf},
                        {"angle", parts.angle, weights.angle},
                        {"refinement", parts.refine, weights.refine},
                        {"scale", parts.scale, weights.scale}};
  torch::Tensor total;
  for (const auto& term : terms) {
    if (!term.value.defined()) continue;
    if (!std::isfinite(term.value.item<double>())) {
      throw NumericalError(std::string("non-finite ") + term.name + " loss");
    }
    auto w = term.value * term.weight;
    total = total.defined() ? total + w : w;
  }
  if (!total.defined()) return torch::zeros({});
  return total;
}

}  // namespace rotir
