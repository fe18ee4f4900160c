#pragma once

#include <array>
#include <complex>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rotir/geometry.hpp"
#include "rotir/image.hpp"

namespace rotir {

/// 2|a & b| / (|a| + |b|). Both empty is undefined and throws.
double dice(const BinaryMask& a, const BinaryMask& b);

struct PyramidConfig {
  int levels = 4;
  int orientations = 6;
};

/// One complex subband, row-major.
struct ComplexBand {
  int height = 0;
  int width = 0;
  std::vector<std::complex<double>> coeff;

  std::complex<double> operator()(int y, int x) const { return coeff[static_cast<std::size_t>(y) * width + x]; }
};

/// bands[l][o], level 0 at full resolution, each further level ceil(previous / 2).
struct ComplexPyramid {
  std::vector<std::vector<ComplexBand>> bands;
};

/// Frequency response of the (level, orientation) filter at DFT frequency (wx, wy) in
/// radians per sample, wx, wy in [-pi, pi). Radial part: one-octave raised cosine in
/// log2 |w| centred on pi / 2^(level+1); angular part: 2 cos^(O-1) of the angle to the
/// band direction on one half-plane only, so the spatial response is complex with a
/// quadrature (90 degree shifted) imaginary part.
double steerable_filter(int level, int orientation, const PyramidConfig& cfg, double wx, double wy);

/// Filters the image at full resolution in the Fourier domain, then keeps every
/// 2^level-th sample of level `level`.
ComplexPyramid complex_wavelet_transform(const Image& img, const PyramidConfig& cfg = {});

/// Mean over sliding window x window patches, orientations and levels of
/// (2|sum c_a conj(c_b)| + K) / (sum |c_a|^2 + sum |c_b|^2 + K). Windows where both
/// energies vanish count as 1.
double cw_ssim(const Image& a, const Image& b, int window = 7, double K = 0.0, const PyramidConfig& cfg = {});

/// Mean SSIM over sliding uniform window x window patches (dynamic range 1).
double windowed_ssim(const Image& a, const Image& b, int window = 7);

struct AngleSpread {
  double mean_deg = 0.0;     // circular mean
  double std_deg = 0.0;      // circular standard deviation sqrt(-2 ln R)
  double extreme_deg = 0.0;  // max - min after unwrapping around the circular mean
};

/// Spread of angles given in degrees; any branch (adding 360 to one entry changes nothing).
AngleSpread angle_spread(std::span<const double> degrees);

/// Moving image pre-rotated by k quarter turns (torch rot90 sense) equals the moving
/// image transformed by theta = -k * 90 degrees about the centre, so the detected angle
/// minus k * 90 degrees should not depend on k.
double rotation_residual_deg(const SimilarityTransform& detected, int quarter_turns);

struct RobustnessRecord {
  std::array<double, 4> residual_deg{};  // per pre-rotation 0, 90, 180, 270
  AngleSpread spread;
  bool failed = false;
};

struct RobustnessSummary {
  std::vector<RobustnessRecord> pairs;
  int failures = 0;
  double mean_std_deg = 0.0;  // over non-failed pairs
  double max_std_deg = 0.0;
};

/// Registration callback: nothing on failure.
using RegisterFn = std::function<std::optional<SimilarityTransform>(const Image& moving, const Image& fixed)>;

/// Runs register_fn with the moving image rotated by 0, 90, 180 and 270 degrees.
RobustnessSummary rotation_robustness(const RegisterFn& register_fn,
                                      std::span<const std::pair<Image, Image>> pairs);

}  // namespace rotir
