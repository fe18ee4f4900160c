#include "rotir/matcher.hpp"

#include <cmath>

#include "rotir/error.hpp"

namespace rotir {

namespace F = torch::nn::functional;

void MatcherConfig::validate() const {
  if (in_channels < 2 || in_channels % 2 != 0) throw ConfigError("matcher input must be vector pairs");
  if (width < 4 || width % 4 != 0) throw ConfigError("model width must be divisible by 4");
  if (heads < 1 || width % heads != 0) throw ConfigError("model width must be divisible by the head count");
  if (blocks < 1) throw ConfigError("matcher needs at least one block");
  if (grid_size < 1) throw ConfigError("grid size must be positive");
}

torch::Tensor positional_encoding(int S, int D) {
  if (D < 4 || D % 4 != 0) throw ConfigError("positional encoding width must be divisible by 4");
  if (S < 1) throw ConfigError("positional encoding grid must be non-empty");
  auto pe = torch::zeros({D, S, S});
  auto idx = torch::arange(S, torch::kFloat32);
  auto grids = torch::meshgrid({idx, idx}, "ij");
  const auto& yy = grids[0];
  const auto& xx = grids[1];
  for (int c = 0; c < D / 4; ++c) {
    const double freq = std::exp(-std::log(10000.0) * (2.0 * c) / (D / 2.0));
    pe[4 * c] = torch::sin(xx * freq);
    pe[4 * c + 1] = torch::cos(xx * freq);
    pe[4 * c + 2] = torch::sin(yy * freq);
    pe[4 * c + 3] = torch::cos(yy * freq);
  }
  return pe.flatten(1).t().contiguous();
}

torch::Tensor linear_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v) {
  if (q.size(-2) == 0 || k.size(-2) == 0) throw ConfigError("linear attention on an empty sequence");
  if (k.size(-2) != v.size(-2)) throw ConfigError("keys and values differ in length");
  auto fq = F::elu(q) + 1.0;
  auto fk = F::elu(k) + 1.0;
  auto kv = torch::matmul(fk.transpose(-2, -1), v);                             // (..., Dk, Dv)
  auto norm = torch::matmul(fq, fk.sum(-2).unsqueeze(-1));                       // (..., L, 1)
  return torch::matmul(fq, kv) / norm;
}

std::pair<torch::Tensor, torch::Tensor> canonicalize_tokens(const torch::Tensor& features) {
  const int64_t B = features.size(0), C = features.size(1);
  if (C < 2 || C % 2 != 0) throw ConfigError("token canonicalization needs vector pairs");
  const int64_t L = features.size(2) * features.size(3);
  auto v = features.reshape({B, C / 2, 2, L}).permute({0, 3, 1, 2});  // (B, L, fields, 2)
  auto n0 = v.select(2, 0).norm(2, -1, true).clamp_min(1e-6);
  auto u = v.select(2, 0) / n0;  // (cos, sin) of the first vector
  auto c = u.narrow(-1, 0, 1), s = u.narrow(-1, 1, 1);
  auto rest = v.narrow(2, 1, C / 2 - 1);
  auto x = rest.select(-1, 0), y = rest.select(-1, 1);
  auto inv = torch::cat({n0, c * x + s * y, c * y - s * x}, -1);
  return {inv, u};
}

EncoderLayerImpl::EncoderLayerImpl(int width, int heads) : heads_(heads) {
  auto lin = [](int in, int out) { return torch::nn::Linear(torch::nn::LinearOptions(in, out).bias(false)); };
  q_ = register_module("q", lin(width, width));
  k_ = register_module("k", lin(width, width));
  v_ = register_module("v", lin(width, width));
  merge_ = register_module("merge", lin(width, width));
  norm1_ = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  norm2_ = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  mlp1_ = register_module("mlp1", lin(2 * width, 2 * width));
  mlp2_ = register_module("mlp2", lin(2 * width, width));
}

torch::Tensor EncoderLayerImpl::forward(const torch::Tensor& x, const torch::Tensor& source) {
  const int64_t B = x.size(0), L = x.size(1), D = x.size(2), Ls = source.size(1);
  auto split = [&](const torch::Tensor& t, int64_t len) { return t.view({B, len, heads_, D / heads_}).transpose(1, 2); };
  auto msg = linear_attention(split(q_(x), L), split(k_(source), Ls), split(v_(source), Ls));
  msg = norm1_(merge_(msg.transpose(1, 2).reshape({B, L, D})));
  msg = norm2_(mlp2_(torch::relu(mlp1_(torch::cat({x, msg}, -1)))));
  return x + msg;
}

namespace head {

torch::Tensor orientation(const torch::Tensor& raw) {
  return F::normalize(raw.narrow(-1, kSin, 2), F::NormalizeFuncOptions().dim(-1).eps(1e-12));
}

torch::Tensor refine(const torch::Tensor& raw) { return 0.5 * torch::tanh(raw.narrow(-1, kDx, 2)); }

torch::Tensor scale_exponent(const torch::Tensor& raw) { return raw.select(-1, kScale); }

torch::Tensor matchability(const torch::Tensor& raw) { return raw.select(-1, kMatchability); }

std::optional<double> angle(double sin_raw, double cos_raw) {
  const double n = std::hypot(sin_raw, cos_raw);
  if (!(n > 1e-12) || !std::isfinite(n)) return std::nullopt;
  return std::atan2(sin_raw / n, cos_raw / n);
}

torch::Tensor relative_orientation(const torch::Tensor& raw_moving, const torch::Tensor& raw_fixed) {
  auto om = orientation(raw_moving), of = orientation(raw_fixed);
  auto sm = om.select(-1, 0).unsqueeze(-1), cm = om.select(-1, 1).unsqueeze(-1);   // (B, L, 1)
  auto sf = of.select(-1, 0).unsqueeze(-2), cf = of.select(-1, 1).unsqueeze(-2);   // (B, 1, L)
  return torch::stack({sf * cm - cf * sm, cf * cm + sf * sm}, -1);
}

}  // namespace head

torch::Tensor score_matrix(const torch::Tensor& a, const torch::Tensor& b, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("score temperature must be positive");
  if (a.size(-1) != b.size(-1)) throw ConfigError("token widths differ");
  return torch::matmul(a, b.transpose(-2, -1)) / temperature;
}

MatcherImpl::MatcherImpl(MatcherConfig config) : config_(config) {
  config_.validate();
  const int D = config_.width;
  invariant_proj_ = register_module("invariant_proj", torch::nn::Linear(config_.in_channels - 1, D));
  orientation_proj_ = register_module("orientation_proj", torch::nn::Linear(2, D));
  for (int i = 0; i < 2 * config_.blocks; ++i) layers_->push_back(EncoderLayer(D, config_.heads));
  register_module("layers", layers_);
  head_ = register_module("head", torch::nn::Linear(D, 6));
  pe_ = register_buffer("pe", positional_encoding(config_.grid_size, D));
}

torch::Tensor MatcherImpl::embed(const torch::Tensor& features) {
  if (features.dim() != 4 || features.size(1) != config_.in_channels || features.size(2) != config_.grid_size ||
      features.size(3) != config_.grid_size) {
    throw ConfigError("matcher expects (B, " + std::to_string(config_.in_channels) + ", " +
                      std::to_string(config_.grid_size) + ", " + std::to_string(config_.grid_size) + ") features");
  }
  auto [inv, dir] = canonicalize_tokens(features);
  // Backbone magnitudes are small after the final 1x1 projection; the gain keeps the
  // first projection in a comfortable range at initialization.
  auto t = invariant_proj_(inv * 10.0) + orientation_proj_(dir);
  if (config_.positional_encoding) t = t + pe_;
  return t;
}

std::pair<torch::Tensor, torch::Tensor> MatcherImpl::match_transform(const torch::Tensor& feat_moving,
                                                                     const torch::Tensor& feat_fixed) {
  if (!feat_moving.sizes().equals(feat_fixed.sizes())) throw ConfigError("moving and fixed features differ in shape");
  auto a = embed(feat_moving);
  auto b = embed(feat_fixed);
  for (std::size_t i = 0; i < layers_->size(); ++i) {
    auto layer = layers_[i]->as<EncoderLayerImpl>();
    // Both streams update from the same snapshot so swapping the inputs swaps the outputs.
    if (i % 2 == 0) {
      std::tie(a, b) = std::make_pair(layer->forward(a, a), layer->forward(b, b));
    } else {
      std::tie(a, b) = std::make_pair(layer->forward(a, b), layer->forward(b, a));
    }
  }
  return {a, b};
}

torch::Tensor MatcherImpl::output_head(const torch::Tensor& tokens) { return head_(tokens); }

MatcherOutput MatcherImpl::forward(const torch::Tensor& feat_moving, const torch::Tensor& feat_fixed) {
  MatcherOutput out;
  std::tie(out.moving, out.fixed) = match_transform(feat_moving, feat_fixed);
  // The head angle is read relative to each token's backbone orientation. Rotating the
  // image by theta turns that orientation by -theta, so composing with its conjugate
  // makes the learned angle start from the equivariant estimate.
  auto orient = [](const torch::Tensor& raw, const torch::Tensor& feat) {
    const auto u = canonicalize_tokens(feat).second;
    const auto c = u.select(-1, 0), s = -u.select(-1, 1);
    const auto hs = raw.select(-1, head::kSin), hc = raw.select(-1, head::kCos);
    return torch::cat({torch::stack({hs * c + hc * s, hc * c - hs * s}, -1), raw.narrow(-1, 2, 4)}, -1);
  };
  out.head_moving = orient(output_head(out.moving), feat_moving);
  out.head_fixed = orient(output_head(out.fixed), feat_fixed);
  out.scores = score_matrix(out.moving, out.fixed, config_.effective_temperature()) +
               head::matchability(out.head_fixed).unsqueeze(1);
  return out;
}

}  // namespace rotir
