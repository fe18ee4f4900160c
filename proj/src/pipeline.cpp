#include "rotir/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "rotir/error.hpp"

namespace rotir {

torch::Tensor to_tensor(const Image& img) {
  return torch::from_blob(const_cast<float*>(img.data()), {1, 1, img.height(), img.width()}, torch::kFloat32).clone();
}

Rect parse_rect(const std::string& text) {
  Rect r;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream in(text);
  if (!(in >> r.x >> c1 >> r.y >> c2 >> r.w >> c3 >> r.h) || c1 != ',' || c2 != ',' || c3 != ',' || !in.eof()) {
    throw ConfigError("rectangle must be x,y,w,h, got '" + text + "'");
  }
  return r;
}

Rect bounding_rect(const BinaryMask& mask) {
  int x0 = mask.width(), y0 = mask.height(), x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask(y, x)) continue;
      x0 = std::min(x0, x);
      y0 = std::min(y0, y);
      x1 = std::max(x1, x);
      y1 = std::max(y1, y);
    }
  }
  if (x1 < 0) throw ConfigError("bounding_rect: empty mask");
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

Rect auto_rect(const Image& img) {
  const float level = otsu_threshold(img);
  std::vector<int> labels;
  const BinaryMask fg = threshold(img, level);
  const int n = label_components(fg, labels);
  if (n == 0) return {0, 0, img.width(), img.height()};
  std::vector<std::size_t> area(n, 0);
  for (int l : labels) {
    if (l >= 0) ++area[l];
  }
  const int best = static_cast<int>(std::max_element(area.begin(), area.end()) - area.begin());
  BinaryMask largest(img.height(), img.width());
  for (std::size_t k = 0; k < labels.size(); ++k) largest.data()[k] = labels[k] == best;
  return bounding_rect(largest);
}

torch::Tensor apply_rectangle_mask(const Rect& rect, const PatchGrid& grid) {
  if (rect.w <= 0 || rect.h <= 0) throw ConfigError("rectangle mask has zero area");
  const int size = grid.image_size();
  if (rect.x < 0 || rect.y < 0 || rect.x + rect.w > size || rect.y + rect.h > size) {
    throw ConfigError("rectangle mask exceeds the image");
  }
  auto valid = torch::zeros({grid.count()}, torch::kBool);
  auto acc = valid.accessor<bool, 1>();
  for (int k = 0; k < grid.count(); ++k) {
    const int px = (k % grid.S) * grid.patch_px, py = (k / grid.S) * grid.patch_px;
    const bool outside = px + grid.patch_px <= rect.x || px >= rect.x + rect.w || py + grid.patch_px <= rect.y ||
                         py >= rect.y + rect.h;
    acc[k] = !outside;
  }
  return valid;
}

torch::Tensor mask_scores(const torch::Tensor& scores, const torch::Tensor& valid_moving,
                          const torch::Tensor& valid_fixed) {
  constexpr double kExcluded = -100.0;
  return scores.masked_fill(valid_moving.logical_not().unsqueeze(2), kExcluded)
      .masked_fill(valid_fixed.logical_not().unsqueeze(1), kExcluded);
}

TrainBatch make_batch(std::span<const TrainingSample> samples, const Config& config) {
  if (samples.empty()) throw ConfigError("empty batch");
  const PatchGrid grid = config.grid();
  const int L = grid.count();
  const int64_t B = static_cast<int64_t>(samples.size());
  const int S = config.input_size;
  TrainBatch batch;
  batch.moving = torch::empty({B, 1, S, S});
  batch.fixed = torch::empty({B, 1, S, S});
  batch.target = torch::zeros({B, L + 1, L + 1});
  batch.refine = torch::zeros({B, L, 2});
  batch.matched = torch::zeros({B, L}, torch::kBool);
  batch.theta = torch::empty({B});
  batch.scale = torch::empty({B});
  const bool rect = config.variant.rectangle_mask;
  if (rect) {
    batch.valid_moving = torch::ones({B, L}, torch::kBool);
    batch.valid_fixed = torch::ones({B, L}, torch::kBool);
  }
  for (int64_t b = 0; b < B; ++b) {
    const auto& s = samples[b];
    if (s.moving.height() != S || s.fixed.height() != S || s.gt.tokens != L) {
      throw ConfigError("training sample does not match the model geometry");
    }
    batch.moving[b] = to_tensor(s.moving)[0];
    batch.fixed[b] = to_tensor(s.fixed)[0];
    batch.theta[b] = s.gt_transform.theta;
    batch.scale[b] = s.gt_transform.scale;

    std::vector<int> fixed_of_moving = s.gt.fixed_of_moving;
    torch::Tensor vm, vf;
    if (rect) {
      vm = count_nonzero(s.fg_moving) ? apply_rectangle_mask(bounding_rect(s.fg_moving), grid) : torch::ones({L}, torch::kBool);
      vf = count_nonzero(s.fg_fixed) ? apply_rectangle_mask(bounding_rect(s.fg_fixed), grid) : torch::ones({L}, torch::kBool);
      batch.valid_moving[b] = vm;
      batch.valid_fixed[b] = vf;
      auto am = vm.accessor<bool, 1>();
      auto af = vf.accessor<bool, 1>();
      for (int i = 0; i < L; ++i) {
        const int j = fixed_of_moving[i];
        if (j >= 0 && (!am[i] || !af[j])) fixed_of_moving[i] = -1;
      }
    }
    auto target_b = batch.target[b];
    auto refine_b = batch.refine[b];
    auto matched_b = batch.matched[b];
    auto T = target_b.accessor<float, 2>();
    auto R = refine_b.accessor<float, 2>();
    auto M = matched_b.accessor<bool, 1>();
    std::vector<bool> fixed_taken(L, false);
    for (int i = 0; i < L; ++i) {
      const int j = fixed_of_moving[i];
      if (j < 0) {
        T[i][L] = 1.0f;
        continue;
      }
      T[i][j] = 1.0f;
      fixed_taken[j] = true;
      M[j] = true;
      R[j][0] = static_cast<float>(s.gt.refine[j].x);
      R[j][1] = static_cast<float>(s.gt.refine[j].y);
    }
    for (int j = 0; j < L; ++j) {
      if (!fixed_taken[j]) T[L][j] = 1.0f;
    }
  }
  batch.pairs = batch.target.narrow(1, 0, L).narrow(2, 0, L);
  return batch;
}

torch::Tensor batch_loss(RotirModel& model, const TrainBatch& batch, const Config& config, LossReport* report) {
  const auto out = model->forward(batch.moving, batch.fixed);
  auto scores = out.scores;
  if (batch.valid_moving.defined()) scores = mask_scores(scores, batch.valid_moving, batch.valid_fixed);
  const auto assign = sinkhorn(scores, model->alpha, config.sinkhorn_iters_train);
  LossParts parts;
  parts.conf = confidence_loss(assign.log_probs, batch.target);
  const auto rel = head::relative_orientation(out.head_moving, out.head_fixed);
  parts.angle = angle_loss(rel, batch.theta.view({-1, 1, 1}), batch.pairs);
  parts.refine = refinement_loss(head::refine(out.head_fixed), batch.refine, batch.matched);
  if (config.variant.scale_detection) {
    parts.scale = scale_loss(head::scale_exponent(out.head_fixed), batch.scale.view({-1, 1}), batch.matched);
  }
  auto total = total_loss(parts, config.weights.for_scale(config.variant.scale_detection));
  if (report) {
    report->total = total.item<double>();
    report->conf = parts.conf.item<double>();
    report->angle = parts.angle.item<double>();
    report->refine = parts.refine.item<double>();
    report->scale = parts.scale.defined() ? parts.scale.item<double>() : 0.0;
  }
  return total;
}

namespace {

void write_history(const std::filesystem::path& path, const std::vector<EpochReport>& history) {
  std::ofstream o(path);
  o << "# epoch total conf angle refine scale seconds\n";
  o.precision(9);
  for (const auto& e : history) {
    o << e.epoch << ' ' << e.mean.total << ' ' << e.mean.conf << ' ' << e.mean.angle << ' ' << e.mean.refine << ' '
      << e.mean.scale << ' ' << e.seconds << '\n';
  }
}

}  // namespace

TrainState train(RotirModel& model, const Config& config, const SampleLoader& loader, int count,
                 const std::filesystem::path& out_dir, const std::function<void(const EpochReport&)>& on_epoch) {
  config.validate();
  if (count < 1) throw ConfigError("training needs at least one sample");
  if (config.threads > 0) torch::set_num_threads(config.threads);
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  torch::optim::Adam optimizer(model->parameters(), torch::optim::AdamOptions(config.lr));
  TrainState state;
  state.seed = config.seed;
  Rng shuffle_rng(config.seed);
  std::vector<int> order(count);
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    model->train();
    LossReport sum;
    int steps = 0;
    for (int first = 0; first < count; first += config.batch_size) {
      const int last = std::min(count, first + config.batch_size);
      std::vector<TrainingSample> samples;
      for (int k = first; k < last; ++k) samples.push_back(loader(order[k]));
      const TrainBatch batch = make_batch(samples, config);
      LossReport r;
      auto loss = batch_loss(model, batch, config, &r);
      optimizer.zero_grad();
      loss.backward();
      optimizer.step();
      sum.total += r.total;
      sum.conf += r.conf;
      sum.angle += r.angle;
      sum.refine += r.refine;
      sum.scale += r.scale;
      ++steps;
    }
    EpochReport rep;
    rep.epoch = epoch;
    rep.mean = {sum.total / steps, sum.conf / steps, sum.angle / steps, sum.refine / steps, sum.scale / steps};
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    state.history.push_back(rep);
    state.epoch = epoch + 1;
    if (!out_dir.empty()) {
      save_checkpoint(out_dir / "model.ckpt", model, config);
      torch::save(optimizer, (out_dir / "optimizer.pt").string());
      std::ofstream(out_dir / "config.txt") << config.to_text();
      write_history(out_dir / "loss_history.txt", state.history);
    }
    if (on_epoch) on_epoch(rep);
  }
  model->eval();
  return state;
}

TrainState train_from_directory(const Config& config, const std::filesystem::path& data_dir,
                                const std::filesystem::path& out_dir,
                                const std::function<void(const EpochReport&)>& on_epoch) {
  const Dataset data(data_dir, config.grid());
  torch::manual_seed(config.seed);
  RotirModel model(config);
  const PatchGrid grid = config.grid();
  SampleLoader loader = [&](int k) {
    TrainingSample s = data.load(k);
    s.gt = gt_matching_map(s.gt_transform, s.fg_moving, grid, config.min_fraction);
    return s;
  };
  return train(model, config, loader, data.size(), out_dir, on_epoch);
}

RegisterOptions default_register_options(const Config& config) {
  RegisterOptions o;
  o.variant = config.variant;
  o.threshold = config.match_threshold;
  o.iterations = config.sinkhorn_iters_infer;
  return o;
}

namespace {

Rect scale_rect(const Rect& r, double f, int size) {
  Rect s;
  s.x = std::clamp(static_cast<int>(std::floor(r.x * f)), 0, size - 1);
  s.y = std::clamp(static_cast<int>(std::floor(r.y * f)), 0, size - 1);
  const int x1 = std::clamp(static_cast<int>(std::ceil((r.x + r.w) * f)), s.x + 1, size);
  const int y1 = std::clamp(static_cast<int>(std::ceil((r.y + r.h) * f)), s.y + 1, size);
  s.w = x1 - s.x;
  s.h = y1 - s.y;
  return s;
}

// T acts on model-resolution coordinates; express it on the original inputs:
// p -> (1 / ff) * T(fm * p), centred on the original fixed image.
SimilarityTransform fold_resize(const SimilarityTransform& T, double fm, double ff, Point2 center) {
  if (fm == 1.0 && ff == 1.0) return T;
  SimilarityTransform out;
  out.theta = T.theta;
  out.scale = T.scale * (fm / ff);
  out.center = center;
  const double c = std::cos(T.theta) * out.scale, s = std::sin(T.theta) * out.scale;
  auto rot = [&](Point2 p) { return Point2{c * p.x - s * p.y, s * p.x + c * p.y}; };
  const Point2 rc = rot({T.center.x / fm, T.center.y / fm});
  const Point2 b{(T.center.x + T.t.x) / ff - rc.x, (T.center.y + T.t.y) / ff - rc.y};
  const Point2 rcp = rot(center);
  out.t = {b.x - center.x + rcp.x, b.y - center.y + rcp.y};
  return out;
}

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)); }

void draw_line(RgbImage& img, Point2 a, Point2 b, std::uint8_t r, std::uint8_t g, std::uint8_t bl) {
  const double len = std::max(std::abs(b.x - a.x), std::abs(b.y - a.y));
  const int steps = std::max(1, static_cast<int>(std::ceil(len)));
  for (int k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) / steps;
    img.set(static_cast<int>(std::floor(a.x + t * (b.x - a.x))), static_cast<int>(std::floor(a.y + t * (b.y - a.y))), r,
            g, bl);
  }
}

void draw_dot(RgbImage& img, Point2 p, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  const int cx = static_cast<int>(std::floor(p.x)), cy = static_cast<int>(std::floor(p.y));
  for (int dy = -1; dy <= 1; ++dy) {
    for (int dx = -1; dx <= 1; ++dx) img.set(cy + dy, cx + dx, r, g, b);
  }
}

}  // namespace

RegistrationResult register_images(RotirModel& model, const Config& config, const Image& moving, const Image& fixed,
                                   const RegisterOptions& options, bool render) {
  if (options.variant.use_upsampling != config.variant.use_upsampling) {
    throw ConfigError("variant " + options.variant.name() + " does not match the checkpoint's backbone (" +
                      config.variant.name() + ")");
  }
  const int S = config.input_size;
  const PatchGrid grid = config.grid();
  double fm = 1.0, ff = 1.0;
  const Image m = resize_square(moving, S, &fm);
  const Image f = resize_square(fixed, S, &ff);

  torch::NoGradGuard no_grad;
  model->eval();
  const auto out = model->forward(to_tensor(m), to_tensor(f));
  auto scores = out.scores;
  torch::Tensor vm, vf;
  if (options.variant.rectangle_mask) {
    vm = apply_rectangle_mask(options.rect_moving ? scale_rect(*options.rect_moving, fm, S) : auto_rect(m), grid);
    vf = apply_rectangle_mask(options.rect_fixed ? scale_rect(*options.rect_fixed, ff, S) : auto_rect(f), grid);
    scores = mask_scores(scores, vm.unsqueeze(0), vf.unsqueeze(0));
  }
  const auto assign = sinkhorn(scores, model->alpha, options.iterations);
  RegistrationResult res;
  res.matches = extract_matches(assign.log_probs[0], out.head_moving[0], out.head_fixed[0], grid, options.threshold);
  if (vm.defined()) {
    auto am = vm.accessor<bool, 1>();
    auto af = vf.accessor<bool, 1>();
    std::erase_if(res.matches, [&](const Match& mt) { return !am[mt.moving] || !af[mt.fixed]; });
  }

  SimilarityTransform T = SimilarityTransform::identity(grid.image_center());
  if (res.matches.empty()) {
    res.failed = true;
    res.failure = "no matches above the confidence threshold";
  } else {
    try {
      T = estimate_from_params(res.matches, grid, options.variant.scale_detection, options.variant.refine_at_inference);
    } catch (const DegenerateError& e) {
      res.failed = true;
      res.failure = e.what();
    }
  }
  res.transform = fold_resize(T, fm, ff, {fixed.width() / 2.0, fixed.height() / 2.0});
  res.warped = warp_to(moving, res.transform, fixed.height(), fixed.width());

  if (render) {
    res.overlay = RgbImage(fixed.height(), fixed.width());
    for (int y = 0; y < fixed.height(); ++y) {
      for (int x = 0; x < fixed.width(); ++x) {
        const auto a = to_byte(fixed(y, x)), b = to_byte(res.warped(y, x));
        res.overlay.set(y, x, a, b, a);
      }
    }
    res.match_view = RgbImage(S, 2 * S);
    for (int y = 0; y < S; ++y) {
      for (int x = 0; x < S; ++x) {
        const auto a = to_byte(m(y, x)), b = to_byte(f(y, x));
        res.match_view.set(y, x, a, a, a);
        res.match_view.set(y, x + S, b, b, b);
      }
    }
    for (const auto& mt : res.matches) {
      const Point2 p = patch_center(mt.moving, grid);
      const Point2 c = patch_center(mt.fixed, grid);
      const Point2 q = options.variant.refine_at_inference ? mt.refined : c;
      const auto g = static_cast<std::uint8_t>(std::lround(55 + 200 * mt.confidence));
      draw_line(res.match_view, p, {q.x + S, q.y}, 255, g, 0);
      draw_dot(res.match_view, p, 0, 255, 255);
      draw_dot(res.match_view, {q.x + S, q.y}, 0, 255, 255);
    }
  }
  return res;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  if (values.empty()) return out;
  for (double v : values) out.mean += v;
  out.mean /= values.size();
  double ss = 0.0;
  for (double v : values) ss += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(ss / values.size());
  return out;
}

namespace {

BinaryMask rot90_mask(const BinaryMask& mask, int k) { return threshold(rot90(to_image(mask), k), 0.5f); }

}  // namespace

RegistrationReport evaluate(RotirModel& model, const Config& config, const SampleLoader& loader, int count,
                            const RegisterOptions& options, int max_pairs, bool with_cw_ssim) {
  RegistrationReport report;
  report.variant = options.variant.name();
  const int n = max_pairs > 0 ? std::min(max_pairs, count) : count;
  std::vector<double> dices, cws;
  double std_total = 0.0;
  for (int p = 0; p < n; ++p) {
    const TrainingSample s = loader(p);
    RobustnessRecord rec;
    for (int k = 0; k < 4; ++k) {
      const Image mk = rot90(s.moving, k);
      const BinaryMask mask_k = rot90_mask(s.fg_moving, k);
      RegisterOptions o = options;
      if (options.variant.rectangle_mask) {
        o.rect_moving = bounding_rect(mask_k);
        o.rect_fixed = bounding_rect(s.fg_fixed);
      }
      EvalRow row;
      row.pair_id = p;
      row.variant = report.variant;
      row.rotation = 90 * k;
      RegistrationResult r;
      try {
        r = register_images(model, config, mk, s.fixed, o, false);
      } catch (const NumericalError& e) {
        r.failed = true;
        r.failure = e.what();
        r.transform = SimilarityTransform::identity({s.fixed.width() / 2.0, s.fixed.height() / 2.0});
        r.warped = warp_to(mk, r.transform, s.fixed.height(), s.fixed.width());
      }
      row.failed = r.failed;
      row.scale = r.transform.scale;
      row.dice = dice(warp_mask(mask_k, r.transform), s.fg_fixed);
      row.cw_ssim = with_cw_ssim ? cw_ssim(r.warped, s.fixed) : std::numeric_limits<double>::quiet_NaN();
      const double residual = rotation_residual_deg(r.transform, k);
      rec.residual_deg[k] = residual;
      if (r.failed) {
        rec.failed = true;
        row.angle_residual_deg = std::numeric_limits<double>::quiet_NaN();
        ++report.failures;
      } else {
        row.angle_residual_deg = wrap_angle((residual - s.gt_transform.theta * 180.0 / std::numbers::pi) *
                                            std::numbers::pi / 180.0) *
                                 180.0 / std::numbers::pi;
      }
      dices.push_back(row.dice);
      if (with_cw_ssim) cws.push_back(row.cw_ssim);
      report.rows.push_back(row);
    }
    if (rec.failed) {
      ++report.robustness.failures;
    } else {
      rec.spread = angle_spread(rec.residual_deg);
      std_total += rec.spread.std_deg;
      report.robustness.max_std_deg = std::max(report.robustness.max_std_deg, rec.spread.std_deg);
    }
    report.robustness.pairs.push_back(rec);
  }
  const int ok = n - report.robustness.failures;
  report.robustness.mean_std_deg = ok > 0 ? std_total / ok : 0.0;
  report.dice = mean_std(dices);
  report.cw_ssim = mean_std(cws);
  return report;
}

void write_report_csv(const std::filesystem::path& path, const RegistrationReport& report) {
  std::ofstream o(path);
  if (!o) throw ConfigError("cannot write report '" + path.string() + "'");
  o.precision(10);
  o << "pair_id,variant,rotation,dice,cw_ssim,angle_residual_deg\n";
  for (const auto& r : report.rows) {
    o << r.pair_id << ',' << r.variant << ',' << r.rotation << ',' << r.dice << ',' << r.cw_ssim << ','
      << r.angle_residual_deg << '\n';
  }
}

void write_robustness_csv(const std::filesystem::path& path, const RegistrationReport& report) {
  std::ofstream o(path);
  if (!o) throw ConfigError("cannot write report '" + path.string() + "'");
  o.precision(10);
  o << "pair_id,variant,residual_0,residual_90,residual_180,residual_270,std_deg,extreme_deg,failed\n";
  for (std::size_t p = 0; p < report.robustness.pairs.size(); ++p) {
    const auto& r = report.robustness.pairs[p];
    o << p << ',' << report.variant;
    for (double d : r.residual_deg) o << ',' << d;
    o << ',' << r.spread.std_deg << ',' << r.spread.extreme_deg << ',' << (r.failed ? 1 : 0) << '\n';
  }
}

std::string format_aggregate(const RegistrationReport& report) {
  char buf[512];
  std::snprintf(buf, sizeof(buf),
                "%-8s %-17s %-17s %-22s %s\n%-8s %.3f +- %.3f     %.3f +- %.3f     %6.2f / %6.2f         %d\n",
                "variant", "DICE", "CW-SSIM", "rotation std mean/max", "failures", report.variant.c_str(),
                report.dice.mean, report.dice.std, report.cw_ssim.mean, report.cw_ssim.std,
                report.robustness.mean_std_deg, report.robustness.max_std_deg, report.failures);
  return buf;
}

}  // namespace rotir
