#pragma once

#include <torch/torch.h>

#include <cmath>
#include <functional>

#include "rotir/config.hpp"
#include "rotir/datasynth.hpp"

namespace rotir::testsupport {

/// Central-difference gradient of a scalar function of a double tensor, compared with
/// autograd. Returns |g_auto - g_fd| / max(|g_auto|, |g_fd|) in the 2-norm.
inline double gradient_rel_error(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x0,
                                 double step = 1e-4) {
  auto x = x0.detach().to(torch::kFloat64).clone().requires_grad_(true);
  auto y = f(x);
  auto g_auto = torch::autograd::grad({y}, {x})[0].detach();
  auto g_fd = torch::zeros_like(g_auto);
  auto flat = x.detach().clone().view(-1);
  auto out = g_fd.view(-1);
  torch::NoGradGuard guard;
  for (int64_t k = 0; k < flat.numel(); ++k) {
    const double keep = flat[k].item<double>();
    flat[k] = keep + step;
    const double up = f(flat.view(x.sizes())).item<double>();
    flat[k] = keep - step;
    const double down = f(flat.view(x.sizes())).item<double>();
    flat[k] = keep;
    out[k] = (up - down) / (2.0 * step);
  }
  const double denom = std::max({g_auto.norm().item<double>(), g_fd.norm().item<double>(), 1e-12});
  return (g_auto - g_fd).norm().item<double>() / denom;
}

/// Small, fast configuration on the full 256 x 256 frame for training tests.
inline Config tiny_config() {
  Config c;
  c.widths = {1, 1, 2, 2};
  c.model_width = 16;
  c.heads = 2;
  c.blocks = 1;
  c.batch_size = 4;
  c.epochs = 2;
  c.sinkhorn_iters_train = 20;
  c.sinkhorn_iters_infer = 20;
  return c;
}

}  // namespace rotir::testsupport
