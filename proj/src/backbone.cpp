#include "rotir/backbone.hpp"

#include "rotir/error.hpp"

namespace rotir {

void BackboneConfig::validate() const {
  if (grid_size < 1 || input_size % grid_size != 0) {
    throw ConfigError("input size must be a multiple of the grid size");
  }
  const int p = patch_px();
  if ((p & (p - 1)) != 0) throw ConfigError("patch size must be a power of two");
  int stages = 0;
  for (int q = p; q > 1; q /= 2) ++stages;
  if (static_cast<int>(widths.size()) != stages) {
    throw ConfigError("need one width per stride-2 stage (" + std::to_string(stages) + ")");
  }
  for (int w : widths) {
    if (w < 1) throw ConfigError("stage widths must be positive");
  }
  FieldType::regular(1, group_order).validate();
}

BasicBlockImpl::BasicBlockImpl(FieldType in, FieldType out, int kernel_size) {
  conv_ = register_module("conv", SteerableKernel(in, out, kernel_size));
  norm_ = register_module("norm", FieldBatchNorm(out));
}

FeatureField BasicBlockImpl::forward(const FeatureField& x, int stride) {
  const FeatureField y = x.type.kind == FieldKind::Trivial ? lift_conv(x, conv_, stride)
                                                           : regular_conv(x, conv_, stride);
  return relu(norm_->forward(y));
}

torch::Tensor space_to_depth(const torch::Tensor& x) {
  const int64_t B = x.size(0), C = x.size(1), H = x.size(2), W = x.size(3);
  if (H % 2 != 0 || W % 2 != 0) throw ConfigError("space_to_depth needs even spatial size");
  return x.view({B, C, H / 2, 2, W / 2, 2}).permute({0, 3, 5, 1, 2, 4}).reshape({B, 4 * C, H / 2, W / 2});
}

torch::Tensor depth_to_space(const torch::Tensor& x) {
  const int64_t B = x.size(0), C = x.size(1) / 4, H = x.size(2), W = x.size(3);
  if (x.size(1) % 4 != 0) throw ConfigError("depth_to_space needs a multiple of 4 channels");
  return x.view({B, 2, 2, C, H, W}).permute({0, 3, 4, 1, 5, 2}).reshape({B, C, 2 * H, 2 * W});
}

BackboneImpl::BackboneImpl(BackboneConfig config) : config_(std::move(config)) {
  config_.validate();
  const int N = config_.group_order;
  FieldType in = FieldType::trivial(1, N);
  for (std::size_t s = 0; s < config_.widths.size(); ++s) {
    const FieldType out = FieldType::regular(config_.widths[s], N);
    down_->push_back(BasicBlock(in, out, s == 0 ? config_.lift_kernel : config_.kernel));
    in = out;
  }
  register_module("down", down_);
  down_head_ = register_module("down_head", SteerableKernel(in, FieldType::regular(4, N), 1));
  if (config_.use_upsampling) {
    up1_ = register_module("up1", BasicBlock(in, FieldType::regular(4, N), config_.kernel));
    up2_ = register_module("up2", BasicBlock(FieldType::regular(4, N), FieldType::regular(4, N), config_.kernel));
    up_head_ = register_module("up_head", SteerableKernel(FieldType::regular(4, N), FieldType::regular(2, N), 1));
    up_bias_ = register_parameter("up_bias", torch::zeros({2}));
  }
}

std::pair<FeatureField, FeatureField> BackboneImpl::downsample_path(const FeatureField& image) {
  if (image.type.kind != FieldKind::Trivial || image.type.multiplicity != 1) {
    throw ConfigError("backbone input must be a single scalar channel");
  }
  if (image.height() != config_.input_size || image.width() != config_.input_size) {
    throw ConfigError("backbone expects " + std::to_string(config_.input_size) + "x" +
                      std::to_string(config_.input_size) + " input, got " + std::to_string(image.height()) +
                      "x" + std::to_string(image.width()));
  }
  FeatureField x = image;
  for (const auto& m : *down_) x = m->as<BasicBlockImpl>()->forward(x, 2);
  FeatureField vec = regular_to_vector(regular_conv(x, down_head_, 1));
  return {vec, x};
}

torch::Tensor BackboneImpl::upsample_path(const FeatureField& deep) {
  if (!config_.use_upsampling) throw ConfigError("up-sampling path is disabled in this configuration");
  namespace F = torch::nn::functional;
  auto up = F::interpolate(deep.data, F::InterpolateFuncOptions()
                                          .scale_factor(std::vector<double>{2.0, 2.0})
                                          .mode(torch::kNearest));
  FeatureField u(up, deep.type);
  u = up1_->forward(u, 1);
  u = up2_->forward(u, 1);
  u = norm_relu(regular_to_vector(regular_conv(u, up_head_, 1)), up_bias_);
  return space_to_depth(u.data);
}

torch::Tensor BackboneImpl::forward(const torch::Tensor& images) {
  FeatureField image(images, FieldType::trivial(1, config_.group_order));
  auto [vec, deep] = downsample_path(image);
  if (!config_.use_upsampling) return vec.data;
  return torch::cat({vec.data, upsample_path(deep)}, 1);
}

std::vector<BasicBlock> BackboneImpl::blocks() const {
  std::vector<BasicBlock> out;
  for (const auto& m : *down_) out.emplace_back(std::dynamic_pointer_cast<BasicBlockImpl>(m));
  if (up1_) {
    out.push_back(up1_);
    out.push_back(up2_);
  }
  return out;
}

std::vector<EquivarianceResidual> equivariance_residuals(Backbone& backbone, int trials, std::uint64_t seed) {
  torch::NoGradGuard guard;
  const bool was_training = backbone->is_training();
  backbone->eval();
  torch::manual_seed(seed);
  const auto& cfg = backbone->config();
  std::vector<EquivarianceResidual> out;
  auto residual = [](const FeatureField& a, const FeatureField& b) { return (a.data - b.data).abs().max().item<double>(); };

  int size = cfg.input_size;
  int index = 0;
  for (auto block : backbone->blocks()) {
    const bool up = index >= static_cast<int>(cfg.widths.size());
    const int stride = up ? 1 : 2;
    const FieldType in = index == 0 ? FieldType::trivial(1, cfg.group_order)
                                    : FieldType::regular(up && index == static_cast<int>(cfg.widths.size()) + 1
                                                             ? 4
                                                             : (up ? cfg.widths.back() : cfg.widths[index - 1]),
                                                         cfg.group_order);
    const int test_size = std::min(size, 32);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
      FeatureField x(torch::randn({1, in.channels(), test_size, test_size}), in);
      const FeatureField y = block->forward(x, stride);
      for (int j = 1; j < 4; ++j) {
        worst = std::max(worst, residual(block->forward(rotate_field(x, j), stride), rotate_field(y, j)));
      }
    }
    out.push_back({"block" + std::to_string(index), worst});
    if (!up) size /= 2;
    ++index;
  }

  double down = 0.0, full = 0.0;
  for (int t = 0; t < trials; ++t) {
    FeatureField img(torch::rand({1, 1, cfg.input_size, cfg.input_size}), FieldType::trivial(1, cfg.group_order));
    const auto [vec, deep] = backbone->downsample_path(img);
    for (int j = 1; j < 4; ++j) {
      const auto [vec_r, deep_r] = backbone->downsample_path(rotate_field(img, j));
      down = std::max(down, residual(vec_r, rotate_field(vec, j)));
      full = std::max(full, residual(deep_r, rotate_field(deep, j)));
    }
  }
  out.push_back({"down_path", down});
  out.push_back({"deep_regular", full});
  if (was_training) backbone->train();
  return out;
}

}  // namespace rotir
