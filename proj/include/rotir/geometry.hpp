#pragma once

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace rotir {

/// 2-D point in pixel coordinates: x rightward, y downward, origin at the
/// top-left pixel corner (pixel centers sit at half-integers).
struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

/// Row-major 2x3 affine matrix acting on homogeneous (x, y, 1).
using Matrix2x3 = std::array<double, 6>;

/// Rotation + isotropic scale + translation about a fixed center:
///   p' = scale * R(theta) * (p - center) + center + t
struct SimilarityTransform {
  double theta = 0.0;  // radians, normalized to (-pi, pi]
  double scale = 1.0;
  Point2 t{};
  Point2 center{};

  static SimilarityTransform identity(Point2 center = {}) {
    SimilarityTransform T;
    T.center = center;
    return T;
  }
};

double wrap_angle(double radians);

Matrix2x3 to_matrix(const SimilarityTransform& T);
Point2 apply(const SimilarityTransform& T, Point2 p);
std::vector<Point2> apply(const SimilarityTransform& T, std::span<const Point2> points);
SimilarityTransform invert(const SimilarityTransform& T);
/// compose(A, B) applies B first, then A. The result keeps B's center.
SimilarityTransform compose(const SimilarityTransform& A, const SimilarityTransform& B);

/// Same transform expressed about a different rotation center.
SimilarityTransform recenter(const SimilarityTransform& T, Point2 new_center);

/// Largest absolute difference over (theta, scale, tx, ty) after bringing
/// both transforms to a common center.
double parameter_distance(const SimilarityTransform& a, const SimilarityTransform& b);

/// One-line text record `theta_rad scale tx ty cx cy` with 17 significant digits.
std::string serialize(const SimilarityTransform& T);
SimilarityTransform parse_transform(const std::string& line);

/// Regular S x S tiling of a square image; tokens are indexed row-major.
struct PatchGrid {
  int S = 16;
  int patch_px = 16;

  int image_size() const { return S * patch_px; }
  int count() const { return S * S; }
  Point2 image_center() const { return {image_size() / 2.0, image_size() / 2.0}; }
};

Point2 patch_center(int index, const PatchGrid& grid);
/// Token index of the patch containing p, or -1 when p lies outside the image.
int containing_patch(Point2 p, const PatchGrid& grid);

/// One moving-patch / fixed-patch correspondence with the head parameters of
/// the fixed token attached.
struct Match {
  int moving = 0;  // token index into the moving grid
  int fixed = 0;   // token index into the fixed grid
  double confidence = 0.0;
  double sin_theta = 0.0;
  double cos_theta = 1.0;
  double scale_exponent = 0.0;  // scale factor = 1.5^scale_exponent
  Point2 refined{};             // fixed-image coordinate after refinement
};

using MatchSet = std::vector<Match>;

/// Global transform from per-match head parameters: circular confidence-weighted
/// mean angle, weighted geometric-mean scale (base 1.5), and a translation mapping
/// the weighted centroid of moving patch centers onto the weighted centroid of the
/// fixed coordinates. The result is centered on the image center.
SimilarityTransform estimate_from_params(std::span<const Match> matches, const PatchGrid& grid,
                                         bool scale_enabled, bool refine_enabled);

struct PointPair {
  Point2 moving;
  Point2 fixed;
};

/// Weighted least-squares similarity alignment (closed form). Result centered at `center`.
SimilarityTransform estimate_procrustes(std::span<const PointPair> pairs,
                                        std::span<const double> weights, Point2 center = {},
                                        bool scale_enabled = true);

std::ostream& operator<<(std::ostream& os, const SimilarityTransform& T);

}  // namespace rotir
