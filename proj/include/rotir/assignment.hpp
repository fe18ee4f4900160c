#pragma once

#include <torch/torch.h>

#include "rotir/geometry.hpp"

namespace rotir {

struct AssignmentMatrix {
  torch::Tensor log_probs;  // (B, m + 1, n + 1); last row / column are the dustbins
  int iterations_used = 0;
};

/// Appends the dustbin row and column filled with alpha: (B, m, n) -> (B, m + 1, n + 1).
torch::Tensor augment_with_dustbin(const torch::Tensor& scores, const torch::Tensor& alpha);

/// Log marginals (1 per real entry, `bin_mass` for the dustbin), length `count + 1`.
torch::Tensor dustbin_log_marginal(int64_t count, double bin_mass);

/// Entropic optimal transport of (B, m, n) scores with a dustbin of mass n on the rows
/// and m on the columns. Runs the scaling iterations in double precision in the exp
/// domain with a hand-written reverse pass; differentiable w.r.t. scores and alpha.
/// Falls back to the log-domain iteration if the scaled kernel under- or overflows.
AssignmentMatrix sinkhorn(const torch::Tensor& scores, const torch::Tensor& alpha, int iterations);

/// Plain log-domain Sinkhorn on an already augmented (B, M, N) matrix with given log
/// marginals; differentiable through ordinary autograd.
torch::Tensor sinkhorn_log_domain(const torch::Tensor& Z, const torch::Tensor& log_a, const torch::Tensor& log_b,
                                  int iterations);

/// Mutual-argmax matches of one (m + 1, n + 1) log assignment. Rows and columns whose
/// argmax falls in the dustbin give nothing; ties go to the lowest index. Each match
/// gets the relative head orientation of (moving i, fixed j), the scale exponent and
/// refinement of fixed token j, and confidence exp(log_probs[i, j]) >= threshold.
/// Pairs whose raw head orientation has no direction are dropped.
MatchSet extract_matches(const torch::Tensor& log_probs, const torch::Tensor& head_moving,
                         const torch::Tensor& head_fixed, const PatchGrid& grid, double threshold);

}  // namespace rotir
