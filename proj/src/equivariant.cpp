#include "rotir/equivariant.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "rotir/error.hpp"

namespace rotir {

namespace F = torch::nn::functional;

int FieldType::channels_per_field() const {
  switch (kind) {
    case FieldKind::Trivial: return 1;
    case FieldKind::Regular: return group_order;
    case FieldKind::Vector: return 2;
  }
  return 1;
}

void FieldType::validate() const {
  if (group_order < 4 || group_order % 4 != 0) {
    throw ConfigError("group order must be >= 4 and divisible by 4, got " + std::to_string(group_order));
  }
  if (multiplicity < 1) throw ConfigError("field multiplicity must be >= 1");
}

std::string FieldType::describe() const {
  const char* name = kind == FieldKind::Trivial ? "trivial" : kind == FieldKind::Regular ? "regular" : "vector";
  return std::to_string(multiplicity) + "x" + name + "(C" + std::to_string(group_order) + ")";
}

FeatureField::FeatureField(torch::Tensor d, FieldType t) : data(std::move(d)), type(t) {
  type.validate();
  if (data.dim() != 4) throw ConfigError("feature field data must be (B, C, H, W)");
  if (data.size(1) != type.channels()) {
    throw ConfigError("feature field has " + std::to_string(data.size(1)) + " channels, type " +
                      type.describe() + " needs " + std::to_string(type.channels()));
  }
}

FeatureField rotate_field(const FeatureField& x, int quarter_turns) {
  if (x.height() != x.width()) throw ConfigError("rotate_field: spatial extent must be square");
  const int k = ((quarter_turns % 4) + 4) % 4;
  if (k == 0) return x;
  torch::Tensor d = torch::rot90(x.data, k, {2, 3});
  const int64_t B = d.size(0), H = d.size(2), W = d.size(3);
  const int m = x.type.multiplicity;
  switch (x.type.kind) {
    case FieldKind::Trivial: break;
    case FieldKind::Regular: {
      const int N = x.type.group_order;
      d = d.view({B, m, N, H, W}).roll(k * (N / 4), 2).reshape({B, m * N, H, W});
      break;
    }
    case FieldKind::Vector: {
      auto v = d.view({B, m, 2, H, W});
      auto a = v.select(2, 0), b = v.select(2, 1);
      torch::Tensor ra, rb;
      if (k == 1) { ra = -b; rb = a; }
      else if (k == 2) { ra = -a; rb = -b; }
      else { ra = b; rb = -a; }
      d = torch::stack({ra, rb}, 2).reshape({B, 2 * m, H, W});
      break;
    }
  }
  return {d, x.type};
}

torch::Tensor kernel_rotation_matrix(int k, double turn_fraction) {
  if (k < 1 || k % 2 == 0) throw ConfigError("kernel size must be odd, got " + std::to_string(k));
  const double phi = -2.0 * std::numbers::pi * turn_fraction;
  const double c = std::cos(phi), s = std::sin(phi);
  const int half = k / 2;
  auto M = torch::zeros({k * k, k * k}, torch::kFloat64);
  auto acc = M.accessor<double, 2>();
  for (int yi = 0; yi < k; ++yi) {
    for (int xi = 0; xi < k; ++xi) {
      const double x = xi - half, y = yi - half;
      // Source location R(phi)^-1 p, sampled bilinearly; taps outside the support drop out.
      const double sx = c * x + s * y;
      const double sy = -s * x + c * y;
      const double x0 = std::floor(sx), y0 = std::floor(sy);
      const double fx = sx - x0, fy = sy - y0;
      const double w[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
      const int dx[4] = {0, 1, 0, 1}, dy[4] = {0, 0, 1, 1};
      for (int t = 0; t < 4; ++t) {
        const int X = static_cast<int>(x0) + dx[t] + half;
        const int Y = static_cast<int>(y0) + dy[t] + half;
        if (X >= 0 && X < k && Y >= 0 && Y < k && w[t] > 1e-12) acc[yi * k + xi][Y * k + X] += w[t];
      }
    }
  }
  return M.to(torch::kFloat32);
}

SteerableKernelImpl::SteerableKernelImpl(FieldType in, FieldType out, int kernel_size)
    : in_(in), out_(out), k_(kernel_size) {
  in_.validate();
  out_.validate();
  if (k_ < 1 || k_ % 2 == 0) throw ConfigError("kernel size must be odd, got " + std::to_string(k_));
  if (in_.group_order != out_.group_order) throw ConfigError("mismatched group order between field types");
  if (out_.kind != FieldKind::Regular) throw ConfigError("steerable kernels produce regular fields");
  if (in_.kind == FieldKind::Vector) throw ConfigError("steerable kernels take trivial or regular input");
  const int N = in_.group_order;
  const int gin = in_.kind == FieldKind::Regular ? N : 1;
  const double std = std::sqrt(2.0 / (in_.multiplicity * gin * k_ * k_));
  base = register_parameter("base", torch::randn({out_.multiplicity, in_.multiplicity, gin, k_, k_}) * std);
  std::vector<torch::Tensor> mats;
  for (int r = 0; r < N / 4; ++r) mats.push_back(kernel_rotation_matrix(k_, static_cast<double>(r) / N));
  rotations_ = register_buffer("rotations", torch::stack(mats));
}

torch::Tensor SteerableKernelImpl::expanded() const {
  const int N = in_.group_order;
  const bool lift = in_.kind == FieldKind::Trivial;
  const auto flat = base.flatten(-2);  // (mo, mi, gin, k*k)
  std::vector<torch::Tensor> rotated;
  for (int r = 0; r < N / 4; ++r) {
    rotated.push_back(torch::matmul(flat, rotations_[r].t()).unflatten(-1, {k_, k_}));
  }
  std::vector<torch::Tensor> banks;
  for (int g = 0; g < N; ++g) {
    auto w = torch::rot90(rotated[g % (N / 4)], g / (N / 4), {-2, -1});
    // Output orientation g sees input orientation h through base slot (h - g) mod N.
    if (!lift) w = w.roll(g, 2);
    banks.push_back(w);
  }
  const int64_t cin = in_.multiplicity * (lift ? 1 : N);
  return torch::stack(banks, 1).reshape({out_.multiplicity * N, cin, k_, k_});
}

torch::Tensor steerable_conv(const torch::Tensor& x, const torch::Tensor& weights, int kernel_size,
                             int stride) {
  if (stride != 1 && stride != 2) throw ConfigError("stride must be 1 or 2");
  if (stride == 2 && (x.size(2) % 2 != 0 || x.size(3) % 2 != 0)) {
    throw ConfigError("stride 2 needs even spatial size");
  }
  const int p = kernel_size / 2;
  auto xp = p > 0 ? F::pad(x, F::PadFuncOptions({p, p, p, p}).mode(torch::kReflect)) : x;
  if (stride == 1) return F::conv2d(xp, weights);
  auto w = F::pad(weights, F::PadFuncOptions({0, 1, 0, 1}));
  w = (w + w.roll(1, -1) + w.roll(1, -2) + w.roll({1, 1}, {-2, -1})) * 0.25;
  return F::conv2d(xp, w, F::Conv2dFuncOptions().stride(2));
}

namespace {

FeatureField run_conv(const FeatureField& x, const SteerableKernel& kernel, int stride, FieldKind expect) {
  if (x.type.kind != expect) throw ConfigError("convolution input has wrong field kind: " + x.type.describe());
  if (x.type.group_order != kernel->in_type().group_order) throw ConfigError("mismatched group order");
  if (x.type.multiplicity != kernel->in_type().multiplicity) {
    throw ConfigError("convolution input " + x.type.describe() + " does not match kernel " +
                      kernel->in_type().describe());
  }
  return {steerable_conv(x.data, kernel->expanded(), kernel->kernel_size(), stride), kernel->out_type()};
}

}  // namespace

FeatureField lift_conv(const FeatureField& x, const SteerableKernel& kernel, int stride) {
  return run_conv(x, kernel, stride, FieldKind::Trivial);
}

FeatureField regular_conv(const FeatureField& x, const SteerableKernel& kernel, int stride) {
  return run_conv(x, kernel, stride, FieldKind::Regular);
}

FeatureField regular_to_vector(const FeatureField& x) {
  if (x.type.kind != FieldKind::Regular) throw ConfigError("regular_to_vector needs a regular field");
  const int N = x.type.group_order, m = x.type.multiplicity;
  const int64_t B = x.data.size(0), H = x.height(), W = x.width();
  auto g = torch::arange(N, x.data.options()) * (2.0 * std::numbers::pi / N);
  auto basis = torch::stack({torch::cos(g), torch::sin(g)}, 0);  // (2, N)
  auto y = x.data.view({B, m, N, H * W});
  auto v = torch::matmul(basis, y);  // (B, m, 2, HW)
  return {v.reshape({B, 2 * m, H, W}), FieldType::vector(m, N)};
}

FieldBatchNormImpl::FieldBatchNormImpl(FieldType type, double momentum, double eps)
    : type_(type), momentum_(momentum), eps_(eps) {
  type_.validate();
  if (type_.kind == FieldKind::Vector) throw ConfigError("field batch norm needs trivial or regular fields");
  const int m = type_.multiplicity;
  weight_ = register_parameter("weight", torch::ones({m}));
  bias_ = register_parameter("bias", torch::zeros({m}));
  running_mean_ = register_buffer("running_mean", torch::zeros({m}));
  running_var_ = register_buffer("running_var", torch::ones({m}));
}

FeatureField FieldBatchNormImpl::forward(const FeatureField& x) {
  if (x.type != type_) throw ConfigError("batch norm expects " + type_.describe() + ", got " + x.type.describe());
  const int m = type_.multiplicity;
  auto y = x.data.reshape({x.data.size(0), m, -1});
  torch::Tensor mean, var;
  if (is_training()) {
    std::tie(var, mean) = torch::var_mean(y, {0, 2}, /*unbiased=*/false);
    torch::NoGradGuard guard;
    running_mean_.mul_(1.0 - momentum_).add_(mean.detach() * momentum_);
    running_var_.mul_(1.0 - momentum_).add_(var.detach() * momentum_);
  } else {
    mean = running_mean_;
    var = running_var_;
  }
  auto scale = weight_ * torch::rsqrt(var + eps_);
  auto shift = bias_ - mean * scale;
  y = y * scale.view({1, m, 1}) + shift.view({1, m, 1});
  return {y.view_as(x.data), type_};
}

FeatureField relu(const FeatureField& x) {
  if (x.type.kind == FieldKind::Vector) throw ConfigError("pointwise relu breaks vector fields; use norm_relu");
  return {torch::relu(x.data), x.type};
}

FeatureField norm_relu(const FeatureField& x, const torch::Tensor& bias) {
  if (x.type.kind != FieldKind::Vector) throw ConfigError("norm_relu needs a vector field");
  const int m = x.type.multiplicity;
  if (bias.numel() != m) throw ConfigError("norm_relu bias needs one entry per field");
  const int64_t B = x.data.size(0), H = x.height(), W = x.width();
  auto v = x.data.view({B, m, 2, H, W});
  auto n = v.norm(2, 2, /*keepdim=*/true).clamp_min(1e-12);
  auto gain = torch::relu(n + bias.view({1, m, 1, 1, 1})) / n;
  return {(v * gain).reshape({B, 2 * m, H, W}), x.type};
}

}  // namespace rotir
