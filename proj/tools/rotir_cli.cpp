#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "rotir/backbone.hpp"
#include "rotir/config.hpp"
#include "rotir/datasynth.hpp"
#include "rotir/error.hpp"
#include "rotir/model.hpp"
#include "rotir/pipeline.hpp"

namespace fs = std::filesystem;
using namespace rotir;

namespace {

// --rect takes either "x,y,w,h" or a mask image whose nonzero bounding box is used.
Rect rect_from_arg(const std::string& arg) {
  if (fs::exists(arg)) return bounding_rect(threshold(read_png(arg), 0.5f));
  return parse_rect(arg);
}

void print_epoch(const EpochReport& e) {
  std::printf("epoch %3d  loss %.5f  conf %.5f  angle %.5f  refine %.5f  scale %.5f  (%.1fs)\n", e.epoch,
              e.mean.total, e.mean.conf, e.mean.angle, e.mean.refine, e.mean.scale, e.seconds);
  std::fflush(stdout);
}

SampleLoader loader_for(const Dataset& data) {
  return [&data](int k) { return data.load(k); };
}

int run_synth(const fs::path& out, int n, std::uint64_t seed, double scale_range, double noise) {
  if (n < 1) throw ConfigError("--n must be positive");
  SynthesisRanges ranges;
  if (scale_range > 0.0) {
    if (scale_range < 1.0) throw ConfigError("--scale-range must be >= 1");
    ranges.scale_enabled = true;
    ranges.scale_max = scale_range;
  }
  if (noise >= 0.0) ranges.noise_sigma = noise;
  write_dataset(out, n, seed, ranges);
  std::printf("wrote %d pairs to %s\n", n, out.c_str());
  return 0;
}

int run_train(const fs::path& config_path, const fs::path& data, const fs::path& out, int epochs) {
  Config config = Config::load(config_path);
  if (epochs > 0) config.epochs = epochs;
  config.validate();
  const TrainState state = train_from_directory(config, data, out, print_epoch);
  std::printf("trained %d epochs, checkpoint %s\n", state.epoch, (out / "model.ckpt").c_str());
  return 0;
}

int run_register(const fs::path& moving_path, const fs::path& fixed_path, const fs::path& ckpt,
                 const std::string& variant, const std::string& rect, const std::string& rect_moving, bool no_refine,
                 double threshold_value, const fs::path& out) {
  LoadedModel loaded = load_checkpoint(ckpt);
  RegisterOptions options = default_register_options(loaded.config);
  if (!variant.empty()) options.variant = VariantConfig::parse(variant);
  if (no_refine) options.variant.refine_at_inference = false;
  if (threshold_value > 0.0) options.threshold = threshold_value;
  if (!rect.empty()) {
    options.rect_fixed = rect_from_arg(rect);
    options.rect_moving = options.rect_fixed;
  }
  if (!rect_moving.empty()) options.rect_moving = rect_from_arg(rect_moving);

  const Image moving = read_png(moving_path);
  const Image fixed = read_png(fixed_path);
  const RegistrationResult r = register_images(loaded.model, loaded.config, moving, fixed, options);

  fs::create_directories(out);
  {
    std::ofstream f(out / "transform.txt");
    f << serialize(r.transform) << "\n";
    f << "matches " << r.matches.size() << "\n";
    f << "failed " << (r.failed ? 1 : 0) << "\n";
    if (r.failed) f << "reason " << r.failure << "\n";
  }
  {
    std::ofstream f(out / "matches.csv");
    f << "moving,fixed,confidence,angle_deg,scale_exponent,refined_x,refined_y\n";
    for (const Match& m : r.matches) {
      f << m.moving << ',' << m.fixed << ',' << m.confidence << ','
        << std::atan2(m.sin_theta, m.cos_theta) * 180.0 / M_PI << ',' << m.scale_exponent << ',' << m.refined.x
        << ',' << m.refined.y << "\n";
    }
  }
  write_png(out / "warped.png", r.warped);
  write_png(out / "overlay.png", r.overlay);
  write_png(out / "matches.png", r.match_view);

  std::printf("%s\n", serialize(r.transform).c_str());
  if (r.failed) std::fprintf(stderr, "registration failed: %s (identity returned)\n", r.failure.c_str());
  return 0;
}

int run_evaluate(const fs::path& ckpt, const fs::path& data_dir, const std::string& variant, const fs::path& report,
                 int pairs, bool cw_ssim) {
  LoadedModel loaded = load_checkpoint(ckpt);
  RegisterOptions options = default_register_options(loaded.config);
  if (!variant.empty()) options.variant = VariantConfig::parse(variant);
  const Dataset data(data_dir, loaded.config.grid());
  const RegistrationReport rep =
      evaluate(loaded.model, loaded.config, loader_for(data), data.size(), options, pairs, cw_ssim);
  write_report_csv(report, rep);
  std::printf("%s", format_aggregate(rep).c_str());
  return 0;
}

int run_robustness(const fs::path& ckpt, const fs::path& data_dir, const fs::path& report, int pairs) {
  LoadedModel loaded = load_checkpoint(ckpt);
  const RegisterOptions options = default_register_options(loaded.config);
  const Dataset data(data_dir, loaded.config.grid());
  const RegistrationReport rep =
      evaluate(loaded.model, loaded.config, loader_for(data), data.size(), options, pairs, false);
  write_robustness_csv(report, rep);
  std::printf("pairs %zu  failures %d  mean std %.3f deg  max std %.3f deg\n", rep.robustness.pairs.size(),
              rep.robustness.failures, rep.robustness.mean_std_deg, rep.robustness.max_std_deg);
  return 0;
}

int run_equiv_check(const std::string& config_path, int trials, std::uint64_t seed) {
  Config config = config_path.empty() ? Config{} : Config::load(config_path);
  BackboneConfig bc = config.backbone();
  bc.use_upsampling = true;  // cover the up-sampling blocks too
  torch::manual_seed(seed);
  Backbone backbone(bc);
  bool ok = true;
  for (const auto& r : equivariance_residuals(backbone, trials, seed)) {
    const bool single = r.layer.rfind("block", 0) == 0;
    const double tol = single ? 1e-5 : 1e-4;
    const bool pass = r.max_abs <= tol;
    ok = ok && pass;
    std::printf("%-14s %.3e  (tol %.0e)  %s\n", r.layer.c_str(), r.max_abs, tol, pass ? "ok" : "FAIL");
  }
  if (!ok) throw NumericalError("equivariance residual above tolerance");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rotation-equivariant transformer image registration"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth-data", "Write a synthetic training set");
  fs::path synth_out;
  int synth_n = 2000;
  std::uint64_t synth_seed = 0;
  double scale_range = 0.0, noise = -1.0;
  synth->add_option("--out", synth_out)->required();
  synth->add_option("--n", synth_n);
  synth->add_option("--seed", synth_seed);
  synth->add_option("--scale-range", scale_range, "enable scale, log-uniform in [1/R, R]");
  synth->add_option("--noise", noise, "Gaussian noise sigma");

  auto* train_cmd = app.add_subcommand("train", "Train a model");
  fs::path train_config, train_data, train_out;
  int train_epochs = 0;
  train_cmd->add_option("--config", train_config)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--data", train_data)->required()->check(CLI::ExistingDirectory);
  train_cmd->add_option("--out", train_out)->required();
  train_cmd->add_option("--epochs", train_epochs, "override the config epoch count");

  auto* reg = app.add_subcommand("register", "Register a moving image onto a fixed image");
  fs::path reg_moving, reg_fixed, reg_ckpt, reg_out;
  std::string reg_variant, reg_rect, reg_rect_moving;
  bool no_refine = false;
  double reg_threshold = 0.0;
  reg->add_option("--moving", reg_moving)->required()->check(CLI::ExistingFile);
  reg->add_option("--fixed", reg_fixed)->required()->check(CLI::ExistingFile);
  reg->add_option("--ckpt", reg_ckpt)->required()->check(CLI::ExistingFile);
  reg->add_option("--variant", reg_variant);
  reg->add_option("--rect", reg_rect, "x,y,w,h or a mask image; applies to both frames");
  reg->add_option("--rect-moving", reg_rect_moving, "separate rectangle for the moving frame");
  reg->add_flag("--no-refine", no_refine);
  reg->add_option("--threshold", reg_threshold, "match confidence threshold");
  reg->add_option("--out", reg_out)->required();

  auto* eval = app.add_subcommand("evaluate", "Four-rotation evaluation on a dataset");
  fs::path eval_ckpt, eval_data, eval_report;
  std::string eval_variant;
  int eval_pairs = 0;
  bool no_cw_ssim = false;
  eval->add_option("--ckpt", eval_ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", eval_data)->required()->check(CLI::ExistingDirectory);
  eval->add_option("--variant", eval_variant);
  eval->add_option("--report", eval_report)->required();
  eval->add_option("--pairs", eval_pairs, "limit to the first N pairs");
  eval->add_flag("--no-cw-ssim", no_cw_ssim);

  auto* rob = app.add_subcommand("robustness", "Rotation angle detection spread per pair");
  fs::path rob_ckpt, rob_data, rob_report;
  int rob_pairs = 0;
  rob->add_option("--ckpt", rob_ckpt)->required()->check(CLI::ExistingFile);
  rob->add_option("--data", rob_data)->required()->check(CLI::ExistingDirectory);
  rob->add_option("--report", rob_report)->required();
  rob->add_option("--pairs", rob_pairs, "limit to the first N pairs");

  auto* equiv = app.add_subcommand("equiv-check", "Layer-wise 90 degree equivariance residuals");
  std::string equiv_config;
  int equiv_trials = 50;
  std::uint64_t equiv_seed = 0;
  equiv->add_option("--config", equiv_config);
  equiv->add_option("--trials", equiv_trials);
  equiv->add_option("--seed", equiv_seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*synth) return run_synth(synth_out, synth_n, synth_seed, scale_range, noise);
    if (*train_cmd) return run_train(train_config, train_data, train_out, train_epochs);
    if (*reg) {
      return run_register(reg_moving, reg_fixed, reg_ckpt, reg_variant, reg_rect, reg_rect_moving, no_refine,
                          reg_threshold, reg_out);
    }
    if (*eval) return run_evaluate(eval_ckpt, eval_data, eval_variant, eval_report, eval_pairs, !no_cw_ssim);
    if (*rob) return run_robustness(rob_ckpt, rob_data, rob_report, rob_pairs);
    if (*equiv) return run_equiv_check(equiv_config, equiv_trials, equiv_seed);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
