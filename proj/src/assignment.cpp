#include "rotir/assignment.hpp"

#include <cmath>
#include <vector>

#include "rotir/error.hpp"
#include "rotir/matcher.hpp"

namespace rotir {

namespace {

using torch::autograd::AutogradContext;
using torch::autograd::tensor_list;

// Scaling iterations u = a / (K v), v = b / (K^T u) from v = 1, with K = exp(Z - f - g)
// where f is the row maximum of Z and g the column maximum of Z - f. Every row and
// column of K then holds an exact 1 and nothing else exceeds it, so spreads far beyond
// the exp range stay finite. The shifts only move the starting point of the iteration
// and are treated as constants. The reverse pass replays the stored scalings instead
// of recording every iteration on the autograd tape.
class ScalingIterations : public torch::autograd::Function<ScalingIterations> {
 public:
  static torch::Tensor forward(AutogradContext* ctx, const torch::Tensor& Z, const torch::Tensor& a,
                               const torch::Tensor& b, int64_t iterations) {
    const auto Zd = Z.to(torch::kFloat64);
    const int64_t B = Zd.size(0), M = Zd.size(1), N = Zd.size(2);
    const auto f = Zd.amax(2, true);
    const auto shifted = Zd - f;
    const auto g = shifted.amax(1, true);
    const auto K = (shifted - g).exp();
    const auto Kt = K.transpose(1, 2);
    auto U = torch::empty({B, iterations, M}, Zd.options());
    auto V = torch::empty({B, iterations + 1, N}, Zd.options());
    auto v = torch::ones({B, N}, Zd.options());
    V.select(1, 0).copy_(v);
    torch::Tensor u;
    for (int64_t t = 0; t < iterations; ++t) {
      u = a / torch::bmm(K, v.unsqueeze(-1)).squeeze(-1);
      v = b / torch::bmm(Kt, u.unsqueeze(-1)).squeeze(-1);
      U.select(1, t).copy_(u);
      V.select(1, t + 1).copy_(v);
    }
    ctx->save_for_backward({K, U, V, a, b});
    auto out = shifted - g + u.log().unsqueeze(2) + v.log().unsqueeze(1);
    return out.to(Z.scalar_type());
  }

  static tensor_list backward(AutogradContext* ctx, tensor_list grad_outputs) {
    const auto saved = ctx->get_saved_variables();
    const auto& K = saved[0];
    const auto& U = saved[1];
    const auto& V = saved[2];
    const auto& a = saved[3];
    const auto& b = saved[4];
    const auto G = grad_outputs[0].to(torch::kFloat64);
    const int64_t T = U.size(1);
    const auto Kt = K.transpose(1, 2);

    auto u_bar = G.sum(2) / U.select(1, T - 1);
    auto v_bar = G.sum(1) / V.select(1, T);
    auto S_bar = torch::empty({K.size(0), T, K.size(2)}, K.options());
    auto R_bar = torch::empty({K.size(0), T, K.size(1)}, K.options());
    for (int64_t t = T - 1; t >= 0; --t) {
      const auto u = U.select(1, t);
      const auto v = V.select(1, t + 1);
      // v = b / s  =>  s_bar = -v_bar * v / s = -v_bar * v^2 / b
      const auto s_bar = -v_bar * v * v / b;
      u_bar = (t == T - 1 ? u_bar : torch::zeros_like(u)) + torch::bmm(K, s_bar.unsqueeze(-1)).squeeze(-1);
      const auto r_bar = -u_bar * u * u / a;
      v_bar = torch::bmm(Kt, r_bar.unsqueeze(-1)).squeeze(-1);
      S_bar.select(1, t).copy_(s_bar);
      R_bar.select(1, t).copy_(r_bar);
    }
    // dL/dK = sum_t u_t s_bar_t^T + r_bar_t v_{t-1}^T
    const auto K_bar = torch::bmm(U.transpose(1, 2), S_bar) + torch::bmm(R_bar.transpose(1, 2), V.narrow(1, 0, T));
    auto dZ = G + K_bar * K;
    return {dZ.to(grad_outputs[0].scalar_type()), torch::Tensor(), torch::Tensor(), torch::Tensor()};
  }
};

}  // namespace

torch::Tensor augment_with_dustbin(const torch::Tensor& scores, const torch::Tensor& alpha) {
  if (scores.dim() != 3) throw ConfigError("scores must be (B, m, n)");
  const int64_t B = scores.size(0), m = scores.size(1), n = scores.size(2);
  auto a = alpha.to(scores.scalar_type()).reshape({1, 1, 1});
  auto col = a.expand({B, m, 1});
  auto row = a.expand({B, 1, n + 1});
  return torch::cat({torch::cat({scores, col}, 2), row}, 1);
}

torch::Tensor dustbin_log_marginal(int64_t count, double bin_mass) {
  auto lm = torch::zeros({count + 1}, torch::kFloat64);
  lm[count] = std::log(bin_mass);
  return lm;
}

torch::Tensor sinkhorn_log_domain(const torch::Tensor& Z, const torch::Tensor& log_a, const torch::Tensor& log_b,
                                  int iterations) {
  if (iterations < 1) throw ConfigError("sinkhorn needs at least one iteration");
  auto la = log_a.to(Z.scalar_type()).unsqueeze(0);
  auto lb = log_b.to(Z.scalar_type()).unsqueeze(0);
  auto u = torch::zeros({Z.size(0), Z.size(1)}, Z.options());
  auto v = torch::zeros({Z.size(0), Z.size(2)}, Z.options());
  for (int i = 0; i < iterations; ++i) {
    u = la - torch::logsumexp(Z + v.unsqueeze(1), 2);
    v = lb - torch::logsumexp(Z + u.unsqueeze(2), 1);
  }
  return Z + u.unsqueeze(2) + v.unsqueeze(1);
}

AssignmentMatrix sinkhorn(const torch::Tensor& scores, const torch::Tensor& alpha, int iterations) {
  if (iterations < 1) throw ConfigError("sinkhorn needs at least one iteration");
  if (scores.dim() != 3 || scores.size(1) < 1 || scores.size(2) < 1) throw ConfigError("scores must be (B, m, n)");
  if (!torch::isfinite(scores).all().item<bool>() || !torch::isfinite(alpha).all().item<bool>()) {
    throw NumericalError("sinkhorn: non-finite scores or dustbin score");
  }
  const int64_t m = scores.size(1), n = scores.size(2);
  const auto Z = augment_with_dustbin(scores, alpha);
  const auto log_a = dustbin_log_marginal(m, static_cast<double>(n));
  const auto log_b = dustbin_log_marginal(n, static_cast<double>(m));
  AssignmentMatrix out;
  out.iterations_used = iterations;
  out.log_probs = ScalingIterations::apply(Z, log_a.exp(), log_b.exp(), iterations);
  if (!torch::isfinite(out.log_probs).all().item<bool>()) {
    out.log_probs = sinkhorn_log_domain(Z.to(torch::kFloat64), log_a, log_b, iterations).to(scores.scalar_type());
    if (!torch::isfinite(out.log_probs).all().item<bool>()) throw NumericalError("sinkhorn diverged");
  }
  return out;
}

MatchSet extract_matches(const torch::Tensor& log_probs, const torch::Tensor& head_moving,
                         const torch::Tensor& head_fixed, const PatchGrid& grid, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("match threshold must lie in (0, 1)");
  if (log_probs.dim() != 2) throw ConfigError("extract_matches takes a single (m + 1, n + 1) assignment");
  const int64_t m = log_probs.size(0) - 1, n = log_probs.size(1) - 1;
  if (head_moving.size(0) != m || head_fixed.size(0) != n || head_fixed.size(1) != 6 || head_moving.size(1) != 6) {
    throw ConfigError("head outputs do not match the assignment shape");
  }
  if (n != grid.count()) throw ConfigError("fixed token count does not match the patch grid");
  const auto lp = log_probs.detach().to(torch::kFloat64).contiguous();
  const auto hm = head_moving.detach().to(torch::kFloat64).contiguous();
  const auto hf = head_fixed.detach().to(torch::kFloat64).contiguous();
  auto P = lp.accessor<double, 2>();
  auto HM = hm.accessor<double, 2>();
  auto HF = hf.accessor<double, 2>();

  std::vector<int64_t> row_best(m), col_best(n);
  for (int64_t i = 0; i < m; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j <= n; ++j) {
      if (P[i][j] > P[i][best]) best = j;
    }
    row_best[i] = best;
  }
  for (int64_t j = 0; j < n; ++j) {
    int64_t best = 0;
    for (int64_t i = 1; i <= m; ++i) {
      if (P[i][j] > P[best][j]) best = i;
    }
    col_best[j] = best;
  }

  MatchSet matches;
  for (int64_t i = 0; i < m; ++i) {
    const int64_t j = row_best[i];
    if (j == n || col_best[j] != i) continue;
    const double conf = std::exp(P[i][j]);
    if (conf < threshold) continue;
    const auto am = head::angle(HM[i][head::kSin], HM[i][head::kCos]);
    const auto af = head::angle(HF[j][head::kSin], HF[j][head::kCos]);
    if (!am || !af) continue;
    Match mt;
    mt.moving = static_cast<int>(i);
    mt.fixed = static_cast<int>(j);
    mt.confidence = conf;
    mt.sin_theta = std::sin(*af - *am);
    mt.cos_theta = std::cos(*af - *am);
    mt.scale_exponent = HF[j][head::kScale];
    const Point2 c = patch_center(static_cast<int>(j), grid);
    mt.refined = {c.x + 0.5 * std::tanh(HF[j][head::kDx]) * grid.patch_px,
                  c.y + 0.5 * std::tanh(HF[j][head::kDy]) * grid.patch_px};
    matches.push_back(mt);
  }
  return matches;
}

}  // namespace rotir
