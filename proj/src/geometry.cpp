#include "rotir/geometry.hpp"

#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>
#include <ostream>
#include <sstream>

#include "rotir/error.hpp"

namespace rotir {

namespace {

struct Affine {
  double a, b, c, d;  // linear part [[a, b], [c, d]]
  double ox, oy;      // offset
};

Affine affine_of(const SimilarityTransform& T) {
  const double cs = T.scale * std::cos(T.theta);
  const double sn = T.scale * std::sin(T.theta);
  // p' = L (p - c) + c + t = L p + (c + t - L c)
  return {cs,
          -sn,
          sn,
          cs,
          T.center.x + T.t.x - (cs * T.center.x - sn * T.center.y),
          T.center.y + T.t.y - (sn * T.center.x + cs * T.center.y)};
}

SimilarityTransform from_affine(const Affine& A, Point2 center) {
  SimilarityTransform T;
  T.theta = wrap_angle(std::atan2(A.c, A.a));
  T.scale = std::hypot(A.a, A.c);
  T.center = center;
  T.t.x = A.ox + (A.a * center.x + A.b * center.y) - center.x;
  T.t.y = A.oy + (A.c * center.x + A.d * center.y) - center.y;
  return T;
}

}  // namespace

double wrap_angle(double radians) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double r = std::fmod(radians, two_pi);
  if (r <= -std::numbers::pi) r += two_pi;
  if (r > std::numbers::pi) r -= two_pi;
  return r;
}

Matrix2x3 to_matrix(const SimilarityTransform& T) {
  const Affine A = affine_of(T);
  return {A.a, A.b, A.ox, A.c, A.d, A.oy};
}

Point2 apply(const SimilarityTransform& T, Point2 p) {
  const Affine A = affine_of(T);
  return {A.a * p.x + A.b * p.y + A.ox, A.c * p.x + A.d * p.y + A.oy};
}

std::vector<Point2> apply(const SimilarityTransform& T, std::span<const Point2> points) {
  const Affine A = affine_of(T);
  std::vector<Point2> out;
  out.reserve(points.size());
  for (const Point2& p : points) {
    out.push_back({A.a * p.x + A.b * p.y + A.ox, A.c * p.x + A.d * p.y + A.oy});
  }
  return out;
}

SimilarityTransform invert(const SimilarityTransform& T) {
  if (!(T.scale > 0.0)) throw ConfigError("invert: scale must be positive");
  SimilarityTransform inv;
  inv.theta = wrap_angle(-T.theta);
  inv.scale = 1.0 / T.scale;
  inv.center = T.center;
  const double cs = inv.scale * std::cos(inv.theta);
  const double sn = inv.scale * std::sin(inv.theta);
  inv.t = {-(cs * T.t.x - sn * T.t.y), -(sn * T.t.x + cs * T.t.y)};
  return inv;
}

SimilarityTransform compose(const SimilarityTransform& A, const SimilarityTransform& B) {
  const Affine a = affine_of(A);
  const Affine b = affine_of(B);
  const Affine ab{a.a * b.a + a.b * b.c,
                  a.a * b.b + a.b * b.d,
                  a.c * b.a + a.d * b.c,
                  a.c * b.b + a.d * b.d,
                  a.a * b.ox + a.b * b.oy + a.ox,
                  a.c * b.ox + a.d * b.oy + a.oy};
  SimilarityTransform T = from_affine(ab, B.center);
  T.theta = wrap_angle(A.theta + B.theta);
  T.scale = A.scale * B.scale;
  return T;
}

SimilarityTransform recenter(const SimilarityTransform& T, Point2 new_center) {
  SimilarityTransform R = from_affine(affine_of(T), new_center);
  R.theta = T.theta;
  R.scale = T.scale;
  return R;
}

double parameter_distance(const SimilarityTransform& a, const SimilarityTransform& b) {
  const SimilarityTransform bb = recenter(b, a.center);
  double d = std::abs(wrap_angle(a.theta - bb.theta));
  d = std::max(d, std::abs(a.scale - bb.scale));
  d = std::max(d, std::abs(a.t.x - bb.t.x));
  d = std::max(d, std::abs(a.t.y - bb.t.y));
  return d;
}

std::string serialize(const SimilarityTransform& T) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %.17g %.17g %.17g", T.theta, T.scale, T.t.x,
                T.t.y, T.center.x, T.center.y);
  return buf;
}

SimilarityTransform parse_transform(const std::string& line) {
  std::istringstream in(line);
  SimilarityTransform T;
  if (!(in >> T.theta >> T.scale >> T.t.x >> T.t.y >> T.center.x >> T.center.y)) {
    throw ConfigError("malformed transform record: '" + line + "'");
  }
  if (!(T.scale > 0.0)) throw ConfigError("transform record has non-positive scale");
  return T;
}

Point2 patch_center(int index, const PatchGrid& grid) {
  if (index < 0 || index >= grid.count()) {
    throw ConfigError("patch index " + std::to_string(index) + " outside grid of " +
                      std::to_string(grid.count()));
  }
  const double half = grid.patch_px / 2.0;
  return {(index % grid.S) * grid.patch_px + half, (index / grid.S) * grid.patch_px + half};
}

int containing_patch(Point2 p, const PatchGrid& grid) {
  const double size = grid.image_size();
  if (!(p.x >= 0.0 && p.x < size && p.y >= 0.0 && p.y < size)) return -1;
  const int col = static_cast<int>(std::floor(p.x / grid.patch_px));
  const int row = static_cast<int>(std::floor(p.y / grid.patch_px));
  return row * grid.S + col;
}

SimilarityTransform estimate_from_params(std::span<const Match> matches, const PatchGrid& grid,
                                         bool scale_enabled, bool refine_enabled) {
  if (matches.empty()) throw DegenerateError("estimate_from_params: empty match set");
  double sw = 0.0, ss = 0.0, sc = 0.0, sp = 0.0;
  Point2 mc{}, fc{};
  for (const Match& m : matches) {
    const double w = m.confidence;
    if (!(w >= 0.0) || !std::isfinite(w)) throw NumericalError("match confidence must be finite and >= 0");
    const double norm = std::hypot(m.sin_theta, m.cos_theta);
    if (norm > 0.0) {
      ss += w * m.sin_theta / norm;
      sc += w * m.cos_theta / norm;
    }
    sp += w * m.scale_exponent;
    const Point2 pm = patch_center(m.moving, grid);
    const Point2 pf = refine_enabled ? m.refined : patch_center(m.fixed, grid);
    mc.x += w * pm.x;
    mc.y += w * pm.y;
    fc.x += w * pf.x;
    fc.y += w * pf.y;
    sw += w;
  }
  if (!(sw > 0.0)) throw DegenerateError("estimate_from_params: total confidence is zero");
  if (std::hypot(ss, sc) <= 1e-12 * sw) {
    throw DegenerateError("estimate_from_params: per-match angles cancel out");
  }
  SimilarityTransform T;
  T.center = grid.image_center();
  T.theta = wrap_angle(std::atan2(ss, sc));
  T.scale = scale_enabled ? std::pow(1.5, sp / sw) : 1.0;
  mc = {mc.x / sw, mc.y / sw};
  fc = {fc.x / sw, fc.y / sw};
  const double cs = T.scale * std::cos(T.theta);
  const double sn = T.scale * std::sin(T.theta);
  const double dx = mc.x - T.center.x;
  const double dy = mc.y - T.center.y;
  T.t = {fc.x - (cs * dx - sn * dy) - T.center.x, fc.y - (sn * dx + cs * dy) - T.center.y};
  return T;
}

SimilarityTransform estimate_procrustes(std::span<const PointPair> pairs,
                                        std::span<const double> weights, Point2 center,
                                        bool scale_enabled) {
  if (pairs.size() != weights.size()) throw ConfigError("estimate_procrustes: weight count mismatch");
  if (pairs.size() < 2) throw DegenerateError("estimate_procrustes: need at least two pairs");
  double sw = 0.0;
  int effective = 0;
  Point2 mm{}, mf{};
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const double w = weights[k];
    if (!(w >= 0.0) || !std::isfinite(w)) throw NumericalError("estimate_procrustes: bad weight");
    if (w > 0.0) ++effective;
    sw += w;
    mm.x += w * pairs[k].moving.x;
    mm.y += w * pairs[k].moving.y;
    mf.x += w * pairs[k].fixed.x;
    mf.y += w * pairs[k].fixed.y;
  }
  if (effective < 2) throw DegenerateError("estimate_procrustes: fewer than two weighted pairs");
  mm = {mm.x / sw, mm.y / sw};
  mf = {mf.x / sw, mf.y / sw};

  // Complex form: moving z, fixed z'; cross term sum w conj(z) z' carries rotation and scale.
  std::complex<double> cross{0.0, 0.0};
  double var = 0.0;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const std::complex<double> zm{pairs[k].moving.x - mm.x, pairs[k].moving.y - mm.y};
    const std::complex<double> zf{pairs[k].fixed.x - mf.x, pairs[k].fixed.y - mf.y};
    cross += weights[k] * std::conj(zm) * zf;
    var += weights[k] * std::norm(zm);
  }
  if (var <= 1e-12 * sw) throw DegenerateError("estimate_procrustes: moving points coincide");
  if (std::abs(cross) <= 1e-300) throw DegenerateError("estimate_procrustes: no rotation signal");

  SimilarityTransform T;
  T.center = center;
  T.theta = wrap_angle(std::arg(cross));
  T.scale = scale_enabled ? std::abs(cross) / var : 1.0;
  const double cs = T.scale * std::cos(T.theta);
  const double sn = T.scale * std::sin(T.theta);
  const double dx = mm.x - center.x;
  const double dy = mm.y - center.y;
  T.t = {mf.x - (cs * dx - sn * dy) - center.x, mf.y - (sn * dx + cs * dy) - center.y};
  return T;
}

std::ostream& operator<<(std::ostream& os, const SimilarityTransform& T) {
  return os << "SimilarityTransform{theta=" << T.theta << ", scale=" << T.scale << ", t=(" << T.t.x
            << ", " << T.t.y << "), center=(" << T.center.x << ", " << T.center.y << ")}";
}

}  // namespace rotir
