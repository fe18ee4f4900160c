#pragma once

#include <torch/torch.h>

#include <string>

namespace rotir {

enum class FieldKind { Trivial, Regular, Vector };

/// Representation of the cyclic rotation group C_N carried by a feature field.
/// Channel layout is field-major: regular channel f*N + g, vector channel 2*f + {0: x, 1: y}.
struct FieldType {
  FieldKind kind = FieldKind::Trivial;
  int group_order = 8;
  int multiplicity = 1;

  static FieldType trivial(int n, int group_order = 8) { return {FieldKind::Trivial, group_order, n}; }
  static FieldType regular(int n, int group_order = 8) { return {FieldKind::Regular, group_order, n}; }
  static FieldType vector(int n, int group_order = 8) { return {FieldKind::Vector, group_order, n}; }

  int channels_per_field() const;
  int channels() const { return multiplicity * channels_per_field(); }
  void validate() const;
  std::string describe() const;

  friend bool operator==(const FieldType&, const FieldType&) = default;
};

/// Batched feature field: `data` is (B, C, H, W) with C = type.channels().
struct FeatureField {
  torch::Tensor data;
  FieldType type;

  FeatureField() = default;
  FeatureField(torch::Tensor d, FieldType t);

  int64_t height() const { return data.size(2); }
  int64_t width() const { return data.size(3); }
};

/// Group action of a rotation by quarter_turns * 90 degrees: spatial rot90 (torch.rot90
/// over (H, W)) together with the channel action of the field type.
FeatureField rotate_field(const FeatureField& x, int quarter_turns);

/// Bilinear resampling matrix (k*k x k*k) that rotates a k x k kernel by
/// `turn_fraction` of a full turn, in the same sense as rot90.
torch::Tensor kernel_rotation_matrix(int k, double turn_fraction);

/// Free base kernel expanded over the group into a constrained weight bank.
/// Lifting kernels (trivial -> regular) hold (m_out, m_in, 1, k, k) parameters, group
/// kernels (regular -> regular) hold (m_out, m_in, N, k, k). Orientations that are
/// multiples of 90 degrees come from exact rot90, the rest from bilinear rotation.
class SteerableKernelImpl : public torch::nn::Module {
 public:
  SteerableKernelImpl(FieldType in, FieldType out, int kernel_size);

  /// (C_out, C_in, k, k) weight bank.
  torch::Tensor expanded() const;

  const FieldType& in_type() const { return in_; }
  const FieldType& out_type() const { return out_; }
  int kernel_size() const { return k_; }
  torch::Tensor base;

 private:
  FieldType in_, out_;
  int k_;
  torch::Tensor rotations_;  // (N/4, k*k, k*k)
};
TORCH_MODULE(SteerableKernel);

/// Reflect-padded convolution with an expanded weight bank. Stride 2 equals the stride-1
/// convolution followed by 2x2 average pooling, folded into one (k+1)-tap stride-2
/// convolution so even-sized grids stay exactly rot90-equivariant.
torch::Tensor steerable_conv(const torch::Tensor& x, const torch::Tensor& weights, int kernel_size,
                             int stride);

FeatureField lift_conv(const FeatureField& x, const SteerableKernel& kernel, int stride);
FeatureField regular_conv(const FeatureField& x, const SteerableKernel& kernel, int stride);

/// Frequency-1 Fourier component over the group channels of every regular field:
/// (sum_g x_g cos(2 pi g / N), sum_g x_g sin(2 pi g / N)).
FeatureField regular_to_vector(const FeatureField& x);

/// Batch normalization whose statistics and affine parameters are shared by the
/// N channels of each regular field.
class FieldBatchNormImpl : public torch::nn::Module {
 public:
  explicit FieldBatchNormImpl(FieldType type, double momentum = 0.1, double eps = 1e-5);
  FeatureField forward(const FeatureField& x);

 private:
  FieldType type_;
  double momentum_, eps_;
  torch::Tensor weight_, bias_, running_mean_, running_var_;
};
TORCH_MODULE(FieldBatchNorm);

/// Pointwise ReLU. It commutes with channel permutations, so regular fields stay equivariant.
FeatureField relu(const FeatureField& x);

/// v * relu(|v| + b) / |v| per vector field. `bias` has one entry per field.
FeatureField norm_relu(const FeatureField& x, const torch::Tensor& bias);

}  // namespace rotir
