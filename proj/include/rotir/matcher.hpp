#pragma once

#include <torch/torch.h>

#include <optional>
#include <utility>

namespace rotir {

struct MatcherConfig {
  int in_channels = 8;
  int grid_size = 16;
  int width = 64;  // model width D
  int heads = 4;
  int blocks = 2;  // each block = one self layer and one cross layer
  bool positional_encoding = true;
  double temperature = 0.0;  // <= 0 selects 0.1 * width

  double effective_temperature() const { return temperature > 0.0 ? temperature : 0.1 * width; }
  void validate() const;
};

/// 2-D sinusoidal encoding (S*S, D). Channel 4c+0/1 carry sin/cos of the column index,
/// 4c+2/3 sin/cos of the row index, at frequency 10000^(-2c/(D/2)).
torch::Tensor positional_encoding(int S, int D);

/// phi(Q) [phi(K)^T V] / (phi(Q) [phi(K)^T 1]) with phi = elu + 1, over the
/// second-to-last (sequence) axis.
torch::Tensor linear_attention(const torch::Tensor& q, const torch::Tensor& k, const torch::Tensor& v);

/// Splits vector-pair channels (x0, y0, x1, y1, ...) of (B, C, S, S) features into a
/// rotation-invariant description and an orientation per token. The frame is set by
/// the first vector: invariants are its length and the other vectors expressed in it,
/// (B, L, C - 1); the orientation is its unit direction (cos, sin), (B, L, 2).
std::pair<torch::Tensor, torch::Tensor> canonicalize_tokens(const torch::Tensor& features);

/// Multi-head linear-attention layer: message = merge(attn(x, source)), then
/// x + norm2(mlp([x, norm1(message)])).
class EncoderLayerImpl : public torch::nn::Module {
 public:
  EncoderLayerImpl(int width, int heads);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& source);

 private:
  int heads_;
  torch::nn::Linear q_{nullptr}, k_{nullptr}, v_{nullptr}, merge_{nullptr};
  torch::nn::LayerNorm norm1_{nullptr}, norm2_{nullptr};
  torch::nn::Linear mlp1_{nullptr}, mlp2_{nullptr};
};
TORCH_MODULE(EncoderLayer);

/// Raw 6-channel head output per token: (sin, cos, p, dx, dy, matchability).
namespace head {
constexpr int kSin = 0, kCos = 1, kScale = 2, kDx = 3, kDy = 4, kMatchability = 5;
/// Unit (sin, cos) of raw (..., 6) output.
torch::Tensor orientation(const torch::Tensor& raw);
/// Refinement offsets squashed to [-0.5, 0.5] patch units, (..., 2).
torch::Tensor refine(const torch::Tensor& raw);
torch::Tensor scale_exponent(const torch::Tensor& raw);
torch::Tensor matchability(const torch::Tensor& raw);
/// Angle of a raw (sin, cos) pair, or nothing when the pair has no direction.
std::optional<double> angle(double sin_raw, double cos_raw);
/// Per pair (i, j) the unit (sin, cos) of angle_j - angle_i between moving head i and
/// fixed head j: (B, L, L, 2).
torch::Tensor relative_orientation(const torch::Tensor& raw_moving, const torch::Tensor& raw_fixed);
}  // namespace head

struct MatcherOutput {
  torch::Tensor moving;       // (B, L, D) transformed tokens
  torch::Tensor fixed;        // (B, L, D)
  torch::Tensor head_moving;  // (B, L, 6); (sin, cos) composed with the token orientation
  torch::Tensor head_fixed;   // (B, L, 6)
  torch::Tensor scores;       // (B, L, L), matchability of fixed tokens added per column
};

/// S[i, j] = <a_i, b_j> / tau, batched over the leading axis.
torch::Tensor score_matrix(const torch::Tensor& a, const torch::Tensor& b, double temperature);

class MatcherImpl : public torch::nn::Module {
 public:
  explicit MatcherImpl(MatcherConfig config);

  /// Backbone features (B, C, S, S) -> token sequences (B, S*S, D).
  torch::Tensor embed(const torch::Tensor& features);
  /// Embeds both inputs, then applies the self / cross layer stack.
  std::pair<torch::Tensor, torch::Tensor> match_transform(const torch::Tensor& feat_moving,
                                                          const torch::Tensor& feat_fixed);
  torch::Tensor output_head(const torch::Tensor& tokens);
  MatcherOutput forward(const torch::Tensor& feat_moving, const torch::Tensor& feat_fixed);

  const MatcherConfig& config() const { return config_; }

 private:
  MatcherConfig config_;
  torch::nn::Linear invariant_proj_{nullptr}, orientation_proj_{nullptr}, head_{nullptr};
  torch::nn::ModuleList layers_;
  torch::Tensor pe_;
};
TORCH_MODULE(Matcher);

}  // namespace rotir
