#include "rotir/datasynth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "rotir/error.hpp"

namespace rotir {

namespace {

constexpr double kPi = std::numbers::pi;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// Distance from the sprite center to the farthest foreground pixel corner.
double footprint_radius(const Sprite& s) {
  const double cx = s.mask.width() / 2.0;
  const double cy = s.mask.height() / 2.0;
  double r2 = 0.0;
  for (int r = 0; r < s.mask.height(); ++r) {
    for (int c = 0; c < s.mask.width(); ++c) {
      if (!s.mask(r, c)) continue;
      const double dx = std::max(std::abs(c - cx), std::abs(c + 1 - cx));
      const double dy = std::max(std::abs(r - cy), std::abs(r + 1 - cy));
      r2 = std::max(r2, dx * dx + dy * dy);
    }
  }
  return std::sqrt(r2);
}

}  // namespace

float otsu_threshold(const Image& img) {
  if (img.empty()) throw ConfigError("otsu_threshold: empty image");
  const auto [lo_it, hi_it] = std::minmax_element(img.values().begin(), img.values().end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  if (!(hi > lo)) throw DegenerateError("otsu_threshold: constant image has no foreground");
  constexpr int bins = 256;
  std::array<double, bins> hist{};
  for (float v : img.values()) {
    const int b = std::min(bins - 1, static_cast<int>((v - lo) / (hi - lo) * bins));
    hist[b] += 1.0;
  }
  const double total = static_cast<double>(img.size());
  double sum_all = 0.0;
  for (int b = 0; b < bins; ++b) sum_all += b * hist[b];
  double w0 = 0.0, sum0 = 0.0, best = -1.0;
  int best_bin = 0;
  for (int b = 0; b < bins - 1; ++b) {
    w0 += hist[b];
    sum0 += b * hist[b];
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double m0 = sum0 / w0;
    const double m1 = (sum_all - sum0) / w1;
    const double between = w0 * w1 * (m0 - m1) * (m0 - m1);
    if (between > best) {
      best = between;
      best_bin = b;
    }
  }
  return static_cast<float>(lo + (best_bin + 1) * (hi - lo) / bins);
}

int label_components(const BinaryMask& mask, std::vector<int>& labels) {
  const int h = mask.height();
  const int w = mask.width();
  labels.assign(mask.size(), -1);
  int count = 0;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (!mask.data()[start] || labels[start] >= 0) continue;
    labels[start] = count;
    stack.push_back(start);
    while (!stack.empty()) {
      const int k = stack.back();
      stack.pop_back();
      const int r = k / w;
      const int c = k % w;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr;
          const int cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          const int kk = rr * w + cc;
          if (mask.data()[kk] && labels[kk] < 0) {
            labels[kk] = count;
            stack.push_back(kk);
          }
        }
      }
    }
    ++count;
  }
  return count;
}

Sprite crop_foreground(const Image& raw) {
  const float level = otsu_threshold(raw);
  const BinaryMask fg = threshold(raw, level);
  std::vector<int> labels;
  const int n = label_components(fg, labels);
  if (n == 0) throw DegenerateError("crop_foreground: empty foreground");
  std::vector<std::size_t> area(n, 0);
  for (int l : labels) {
    if (l >= 0) ++area[l];
  }
  const int keep = static_cast<int>(std::max_element(area.begin(), area.end()) - area.begin());
  int r0 = raw.height(), r1 = -1, c0 = raw.width(), c1 = -1;
  for (int r = 0; r < raw.height(); ++r) {
    for (int c = 0; c < raw.width(); ++c) {
      if (labels[static_cast<std::size_t>(r) * raw.width() + c] != keep) continue;
      r0 = std::min(r0, r);
      r1 = std::max(r1, r);
      c0 = std::min(c0, c);
      c1 = std::max(c1, c);
    }
  }
  Sprite s{Image(r1 - r0 + 1, c1 - c0 + 1), BinaryMask(r1 - r0 + 1, c1 - c0 + 1)};
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      if (labels[static_cast<std::size_t>(r) * raw.width() + c] != keep) continue;
      s.mask(r - r0, c - c0) = 1;
      s.intensity(r - r0, c - c0) = raw(r, c);
    }
  }
  return s;
}

Sprite synth_blob(Rng& rng, const BlobSize& size) {
  if (!(size.min_area > 0.0 && size.max_area > size.min_area)) {
    throw ConfigError("synth_blob: invalid area range");
  }
  constexpr int harmonics = 5;
  constexpr int angular_samples = 720;
  for (int attempt = 0; attempt < 32; ++attempt) {
    std::array<double, harmonics> amp{}, phase{};
    for (int k = 0; k < harmonics; ++k) {
      amp[k] = std::normal_distribution<double>(0.0, 0.12 / std::pow(k + 2.0, 0.8))(rng);
      phase[k] = uniform(rng, 0.0, 2.0 * kPi);
    }
    auto shape = [&](double phi) {
      double r = 1.0;
      for (int k = 0; k < harmonics; ++k) r += amp[k] * std::cos((k + 2) * phi + phase[k]);
      return std::clamp(r, 0.6, 1.5);
    };
    // Area of the unit-scale outline, then scale to the requested area.
    double unit_area = 0.0;
    double unit_max = 0.0;
    for (int a = 0; a < angular_samples; ++a) {
      const double r = shape(2.0 * kPi * a / angular_samples);
      unit_area += 0.5 * r * r * (2.0 * kPi / angular_samples);
      unit_max = std::max(unit_max, r);
    }
    const double target = uniform(rng, size.min_area * 1.05, size.max_area * 0.95);
    const double radius = std::sqrt(target / unit_area);
    const int half = static_cast<int>(std::ceil(radius * unit_max)) + 2;
    const int n = 2 * half;

    Sprite s{Image(n, n), BinaryMask(n, n)};
    const double ring_freq = uniform(rng, 0.35, 0.6);
    const double ring_phase = uniform(rng, 0.0, 2.0 * kPi);
    struct Spot { double x, y, sigma, a; };
    struct Ridge { double c, s, off, width, a; };
    std::array<Spot, 8> spots;
    for (Spot& sp : spots) {
      sp = {uniform(rng, -radius, radius), uniform(rng, -radius, radius), uniform(rng, 3.0, 9.0),
            uniform(rng, -0.35, 0.35)};
    }
    std::array<Ridge, 3> ridges;
    for (Ridge& rd : ridges) {
      const double ang = uniform(rng, 0.0, kPi);
      rd = {std::cos(ang), std::sin(ang), uniform(rng, -radius, radius), uniform(rng, 1.0, 2.5),
            uniform(rng, -0.25, 0.25)};
    }
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        const double x = c + 0.5 - half;
        const double y = r + 0.5 - half;
        const double rho = std::hypot(x, y);
        if (rho > radius * shape(std::atan2(y, x))) continue;
        double v = 0.55 + 0.12 * std::cos(rho * ring_freq + ring_phase);
        for (const Spot& sp : spots) {
          v += sp.a * std::exp(-((x - sp.x) * (x - sp.x) + (y - sp.y) * (y - sp.y)) /
                               (2.0 * sp.sigma * sp.sigma));
        }
        for (const Ridge& rd : ridges) {
          const double d = x * rd.c + y * rd.s - rd.off;
          v += rd.a * std::exp(-d * d / (2.0 * rd.width * rd.width));
        }
        s.mask(r, c) = 1;
        s.intensity(r, c) = static_cast<float>(std::clamp(v, 0.05, 1.0));
      }
    }
    const auto area = static_cast<double>(count_nonzero(s.mask));
    std::vector<int> labels;
    if (area >= size.min_area && area <= size.max_area && label_components(s.mask, labels) == 1) {
      return s;
    }
  }
  throw NumericalError("synth_blob: could not hit the requested area range");
}

Image render_sprite(const Image& layer, const SpritePose& pose, int frame_size) {
  const double cs = std::cos(pose.angle) / pose.scale;
  const double sn = std::sin(pose.angle) / pose.scale;
  const double hx = layer.width() / 2.0;
  const double hy = layer.height() / 2.0;
  Image out(frame_size, frame_size);
  for (int r = 0; r < frame_size; ++r) {
    for (int c = 0; c < frame_size; ++c) {
      const double dx = c + 0.5 - pose.center.x;
      const double dy = r + 0.5 - pose.center.y;
      // q = R(-angle) (p - center) / scale + sprite center
      out(r, c) = sample_bilinear(layer, cs * dx + sn * dy + hx, -sn * dx + cs * dy + hy, 0.0f);
    }
  }
  return out;
}

int GroundTruthMap::matched_count() const {
  return static_cast<int>(std::count_if(fixed_of_moving.begin(), fixed_of_moving.end(),
                                        [](int j) { return j >= 0; }));
}

std::vector<std::uint8_t> GroundTruthMap::dense() const {
  const int n = tokens + 1;
  std::vector<std::uint8_t> a(static_cast<std::size_t>(n) * n, 0);
  for (int i = 0; i < tokens; ++i) {
    const int j = fixed_of_moving[i];
    a[static_cast<std::size_t>(i) * n + (j >= 0 ? j : tokens)] = 1;
  }
  for (int j = 0; j < tokens; ++j) {
    if (moving_of_fixed[j] < 0) a[static_cast<std::size_t>(tokens) * n + j] = 1;
  }
  return a;
}

GroundTruthMap gt_matching_map(const SimilarityTransform& T, const BinaryMask& fg_moving,
                               const PatchGrid& grid, double min_fraction) {
  if (fg_moving.height() != grid.image_size() || fg_moving.width() != grid.image_size()) {
    throw ConfigError("gt_matching_map: mask size does not match the patch grid");
  }
  const int tokens = grid.count();
  GroundTruthMap gt;
  gt.tokens = tokens;
  gt.fixed_of_moving.assign(tokens, -1);
  gt.moving_of_fixed.assign(tokens, -1);
  gt.refine.assign(tokens, Point2{});
  std::vector<double> best_dist(tokens, 0.0);
  const double px = grid.patch_px;
  for (int i = 0; i < tokens; ++i) {
    const int r0 = (i / grid.S) * grid.patch_px;
    const int c0 = (i % grid.S) * grid.patch_px;
    int fg = 0;
    for (int r = r0; r < r0 + grid.patch_px; ++r) {
      for (int c = c0; c < c0 + grid.patch_px; ++c) fg += fg_moving(r, c) ? 1 : 0;
    }
    if (fg < min_fraction * grid.patch_px * grid.patch_px) continue;
    const Point2 q = apply(T, patch_center(i, grid));
    const int j = containing_patch(q, grid);
    if (j < 0) continue;
    const Point2 cj = patch_center(j, grid);
    const double d = std::hypot(q.x - cj.x, q.y - cj.y);
    const int prev = gt.moving_of_fixed[j];
    if (prev >= 0) {
      if (d >= best_dist[j]) continue;
      gt.fixed_of_moving[prev] = -1;
    }
    gt.moving_of_fixed[j] = i;
    gt.fixed_of_moving[i] = j;
    best_dist[j] = d;
    gt.refine[j] = {(q.x - cj.x) / px, (q.y - cj.y) / px};
  }
  return gt;
}

SimilarityTransform sample_transform(Rng& rng, const SynthesisRanges& ranges, Point2 moving_center,
                                     double radius) {
  const double size = ranges.frame_size;
  SimilarityTransform T;
  T.center = {size / 2.0, size / 2.0};
  // (-pi, pi]
  T.theta = kPi - 2.0 * kPi * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (ranges.scale_enabled) {
    const double lg = std::log(ranges.scale_max);
    T.scale = std::exp(uniform(rng, -lg, lg));
  }
  const double reach = T.scale * radius + ranges.margin_px;
  if (2.0 * reach >= size) throw ConfigError("sample_transform: sprite does not fit the frame");
  const Point2 fixed_center{uniform(rng, reach, size - reach), uniform(rng, reach, size - reach)};
  const double cs = T.scale * std::cos(T.theta);
  const double sn = T.scale * std::sin(T.theta);
  const double dx = moving_center.x - T.center.x;
  const double dy = moving_center.y - T.center.y;
  T.t = {fixed_center.x - (cs * dx - sn * dy) - T.center.x,
         fixed_center.y - (sn * dx + cs * dy) - T.center.y};
  return T;
}

namespace {

struct RenderedPair {
  Image moving, fixed;
  BinaryMask fg_moving, fg_fixed;
};

RenderedPair render_pair(const Sprite& sprite, const SpritePose& moving_pose,
                         const SimilarityTransform& T, double background, double noise_sigma,
                         int frame_size, Rng& rng) {
  SpritePose fixed_pose;
  fixed_pose.angle = moving_pose.angle + T.theta;
  fixed_pose.scale = moving_pose.scale * T.scale;
  fixed_pose.center = apply(T, moving_pose.center);

  const Image mask_layer = to_image(sprite.mask);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  auto frame = [&](const SpritePose& pose, Image& img, BinaryMask& fg) {
    img = render_sprite(sprite.intensity, pose, frame_size);
    const Image cover = render_sprite(mask_layer, pose, frame_size);
    fg = threshold(cover, 0.5f);
    for (std::size_t k = 0; k < img.size(); ++k) {
      double v = img.data()[k] + background * (1.0 - cover.data()[k]);
      if (noise_sigma > 0.0) v += noise(rng);
      img.data()[k] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
  };
  RenderedPair out;
  frame(moving_pose, out.moving, out.fg_moving);
  frame(fixed_pose, out.fixed, out.fg_fixed);
  return out;
}

}  // namespace

TrainingSample synth_pair(const Sprite& sprite, const SynthesisRanges& ranges, Rng& rng,
                          const PatchGrid& grid) {
  if (grid.image_size() != ranges.frame_size) {
    throw ConfigError("synth_pair: frame size does not match the patch grid");
  }
  const double radius = footprint_radius(sprite);
  const double size = ranges.frame_size;
  const double reach = radius + ranges.margin_px;
  const double reach_scaled = (ranges.scale_enabled ? ranges.scale_max : 1.0) * radius + ranges.margin_px;
  if (2.0 * std::max(reach, reach_scaled) >= size) {
    throw ConfigError("synth_pair: sprite does not fit the frame at all poses");
  }
  SpritePose pose;
  SimilarityTransform T;
  bool placed = false;
  for (int attempt = 0; attempt < ranges.max_retries && !placed; ++attempt) {
    pose.angle = kPi - 2.0 * kPi * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    pose.center = {uniform(rng, reach, size - reach), uniform(rng, reach, size - reach)};
    T = sample_transform(rng, ranges, pose.center, radius);
    const Point2 fc = apply(T, pose.center);
    const double fr = T.scale * radius + ranges.margin_px;
    placed = fc.x >= fr && fc.y >= fr && fc.x <= size - fr && fc.y <= size - fr;
  }
  if (!placed) throw NumericalError("synth_pair: pose rejection exhausted its retries");

  const double background = uniform(rng, ranges.background_min, ranges.background_max);
  RenderedPair rendered =
      render_pair(sprite, pose, T, background, ranges.noise_sigma, ranges.frame_size, rng);
  TrainingSample s;
  s.moving = std::move(rendered.moving);
  s.fixed = std::move(rendered.fixed);
  s.fg_moving = std::move(rendered.fg_moving);
  s.fg_fixed = std::move(rendered.fg_fixed);
  s.gt_transform = T;
  s.gt = gt_matching_map(T, s.fg_moving, grid);
  return s;
}

TrainingSample render_with_transform(const Sprite& sprite, const SpritePose& moving_pose,
                                     const SimilarityTransform& T, double background,
                                     double noise_sigma, Rng& rng, const PatchGrid& grid) {
  RenderedPair rendered =
      render_pair(sprite, moving_pose, T, background, noise_sigma, grid.image_size(), rng);
  TrainingSample s;
  s.moving = std::move(rendered.moving);
  s.fixed = std::move(rendered.fixed);
  s.fg_moving = std::move(rendered.fg_moving);
  s.fg_fixed = std::move(rendered.fg_fixed);
  s.gt_transform = T;
  s.gt = gt_matching_map(T, s.fg_moving, grid);
  return s;
}

TrainingSample synth_sample(std::uint64_t seed, const SynthesisRanges& ranges, const BlobSize& size,
                            const PatchGrid& grid) {
  Rng rng(splitmix64(seed));
  const Sprite sprite = synth_blob(rng, size);
  TrainingSample s = synth_pair(sprite, ranges, rng, grid);
  s.seed = seed;
  return s;
}

std::filesystem::path sample_path(const std::filesystem::path& dir, int k, const char* suffix) {
  char name[64];
  std::snprintf(name, sizeof(name), "%05d_%s.png", k, suffix);
  return dir / name;
}

void write_dataset(const std::filesystem::path& dir, int n, std::uint64_t seed,
                   const SynthesisRanges& ranges) {
  if (n <= 0) throw ConfigError("write_dataset: sample count must be positive");
  std::filesystem::create_directories(dir);
  std::ofstream meta(dir / "metadata.txt");
  if (!meta) throw ConfigError("cannot write metadata in '" + dir.string() + "'");
  for (int k = 0; k < n; ++k) {
    const std::uint64_t sample_seed = splitmix64(seed ^ splitmix64(static_cast<std::uint64_t>(k)));
    const TrainingSample s = synth_sample(sample_seed, ranges);
    write_png(sample_path(dir, k, "moving"), s.moving);
    write_png(sample_path(dir, k, "fixed"), s.fixed);
    write_png(sample_path(dir, k, "moving_mask"), to_image(s.fg_moving), true);
    write_png(sample_path(dir, k, "fixed_mask"), to_image(s.fg_fixed), true);
    char line[256];
    std::snprintf(line, sizeof(line), "%llu %.17g %.17g %.17g %.17g\n",
                  static_cast<unsigned long long>(sample_seed), s.gt_transform.theta,
                  s.gt_transform.scale, s.gt_transform.t.x, s.gt_transform.t.y);
    meta << line;
  }
}

Dataset::Dataset(std::filesystem::path dir, PatchGrid grid) : dir_(std::move(dir)), grid_(grid) {
  std::ifstream meta(dir_ / "metadata.txt");
  if (!meta) throw ConfigError("dataset '" + dir_.string() + "' has no metadata.txt");
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    SampleRecord rec;
    unsigned long long seed = 0;
    if (!(in >> seed >> rec.theta >> rec.scale >> rec.tx >> rec.ty)) {
      throw ConfigError("malformed metadata line: '" + line + "'");
    }
    rec.seed = seed;
    records_.push_back(rec);
  }
  if (records_.empty()) throw ConfigError("dataset '" + dir_.string() + "' is empty");
}

TrainingSample Dataset::load(int k) const {
  const SampleRecord& rec = records_.at(k);
  TrainingSample s;
  s.seed = rec.seed;
  s.moving = read_png(sample_path(dir_, k, "moving"));
  s.fixed = read_png(sample_path(dir_, k, "fixed"));
  s.fg_moving = threshold(read_png(sample_path(dir_, k, "moving_mask")), 0.5f);
  s.fg_fixed = threshold(read_png(sample_path(dir_, k, "fixed_mask")), 0.5f);
  s.gt_transform.theta = rec.theta;
  s.gt_transform.scale = rec.scale;
  s.gt_transform.t = {rec.tx, rec.ty};
  s.gt_transform.center = grid_.image_center();
  s.gt = gt_matching_map(s.gt_transform, s.fg_moving, grid_);
  return s;
}

}  // namespace rotir
