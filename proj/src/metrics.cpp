#include "rotir/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>

#include "rotir/error.hpp"

namespace rotir {

namespace {

constexpr double kPi = std::numbers::pi;

struct FftwFree {
  void operator()(fftw_complex* p) const { fftw_free(p); }
};
using FftwBuffer = std::unique_ptr<fftw_complex[], FftwFree>;

FftwBuffer fftw_buffer(std::size_t n) {
  auto* p = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n));
  if (!p) throw std::bad_alloc();
  return FftwBuffer(p);
}

class Plan {
 public:
  Plan(int n, fftw_complex* in, fftw_complex* out, int sign)
      : plan_(fftw_plan_dft_2d(n, n, in, out, sign, FFTW_ESTIMATE)) {}
  ~Plan() { fftw_destroy_plan(plan_); }
  Plan(const Plan&) = delete;
  Plan& operator=(const Plan&) = delete;
  void run() const { fftw_execute(plan_); }

 private:
  fftw_plan plan_;
};

double frequency(int k, int n) {
  const int kk = k < (n + 1) / 2 ? k : k - n;
  return 2.0 * kPi * kk / n;
}

// Summed-area table with a zero first row/column: (h + 1) x (w + 1).
template <typename T>
std::vector<T> integral(const std::vector<T>& v, int h, int w) {
  std::vector<T> s(static_cast<std::size_t>(h + 1) * (w + 1), T{});
  for (int y = 0; y < h; ++y) {
    T row{};
    for (int x = 0; x < w; ++x) {
      row += v[static_cast<std::size_t>(y) * w + x];
      s[static_cast<std::size_t>(y + 1) * (w + 1) + x + 1] = s[static_cast<std::size_t>(y) * (w + 1) + x + 1] + row;
    }
  }
  return s;
}

template <typename T>
T box(const std::vector<T>& s, int w, int y, int x, int size) {
  const auto at = [&](int yy, int xx) { return s[static_cast<std::size_t>(yy) * (w + 1) + xx]; };
  return at(y + size, x + size) - at(y, x + size) - at(y + size, x) + at(y, x);
}

}  // namespace

double dice(const BinaryMask& a, const BinaryMask& b) {
  if (!a.same_shape(b)) throw ConfigError("dice: mask shapes differ");
  std::size_t inter = 0, na = 0, nb = 0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const bool x = a.data()[k] != 0, y = b.data()[k] != 0;
    na += x;
    nb += y;
    inter += x && y;
  }
  if (na + nb == 0) throw ConfigError("dice: both masks are empty");
  return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double steerable_filter(int level, int orientation, const PyramidConfig& cfg, double wx, double wy) {
  const double r = std::hypot(wx, wy);
  if (r == 0.0) return 0.0;
  const double d = std::log2(r) - std::log2(kPi / std::ldexp(1.0, level + 1));
  if (std::abs(d) >= 1.0) return 0.0;
  const double radial = std::cos(0.5 * kPi * d);
  const double c = std::cos(std::atan2(wy, wx) - kPi * orientation / cfg.orientations);
  if (c <= 0.0) return 0.0;
  return radial * 2.0 * std::pow(c, cfg.orientations - 1);
}

ComplexPyramid complex_wavelet_transform(const Image& img, const PyramidConfig& cfg) {
  if (cfg.levels < 2 || cfg.orientations < 1) throw ConfigError("pyramid needs >= 2 levels and >= 1 orientation");
  if (img.height() != img.width()) throw ConfigError("complex wavelet transform needs a square image");
  const int n = img.width();
  if (n < (1 << cfg.levels)) throw ConfigError("image too small for the requested pyramid depth");
  const std::size_t nn = static_cast<std::size_t>(n) * n;
  auto spatial = fftw_buffer(nn);
  auto spectrum = fftw_buffer(nn);
  auto band = fftw_buffer(nn);
  auto out = fftw_buffer(nn);
  Plan forward(n, spatial.get(), spectrum.get(), FFTW_FORWARD);
  Plan inverse(n, band.get(), out.get(), FFTW_BACKWARD);
  for (std::size_t k = 0; k < nn; ++k) {
    spatial[k][0] = img.data()[k];
    spatial[k][1] = 0.0;
  }
  forward.run();

  ComplexPyramid pyr;
  pyr.bands.resize(cfg.levels);
  for (int l = 0; l < cfg.levels; ++l) {
    const int step = 1 << l;
    const int size = (n + step - 1) / step;
    for (int o = 0; o < cfg.orientations; ++o) {
      for (int ky = 0; ky < n; ++ky) {
        const double wy = frequency(ky, n);
        for (int kx = 0; kx < n; ++kx) {
          const double h = steerable_filter(l, o, cfg, frequency(kx, n), wy);
          const std::size_t k = static_cast<std::size_t>(ky) * n + kx;
          band[k][0] = spectrum[k][0] * h;
          band[k][1] = spectrum[k][1] * h;
        }
      }
      inverse.run();
      ComplexBand b{size, size, {}};
      b.coeff.resize(static_cast<std::size_t>(size) * size);
      for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
          const std::size_t k = static_cast<std::size_t>(y * step) * n + x * step;
          b.coeff[static_cast<std::size_t>(y) * size + x] = {out[k][0] / nn, out[k][1] / nn};
        }
      }
      pyr.bands[l].push_back(std::move(b));
    }
  }
  return pyr;
}

double cw_ssim(const Image& a, const Image& b, int window, double K, const PyramidConfig& cfg) {
  if (!a.same_shape(b)) throw ConfigError("cw_ssim: image shapes differ");
  if (K < 0.0) throw ConfigError("cw_ssim: K must be non-negative");
  if (window < 1) throw ConfigError("cw_ssim: window must be positive");
  const auto pa = complex_wavelet_transform(a, cfg);
  const auto pb = complex_wavelet_transform(b, cfg);
  double total = 0.0;
  int bands = 0;
  for (std::size_t l = 0; l < pa.bands.size(); ++l) {
    for (std::size_t o = 0; o < pa.bands[l].size(); ++o) {
      const auto& ca = pa.bands[l][o];
      const auto& cb = pb.bands[l][o];
      const int h = ca.height, w = ca.width;
      if (h < window || w < window) continue;
      std::vector<std::complex<double>> cross(ca.coeff.size());
      std::vector<double> energy(ca.coeff.size());
      for (std::size_t k = 0; k < cross.size(); ++k) {
        cross[k] = ca.coeff[k] * std::conj(cb.coeff[k]);
        energy[k] = std::norm(ca.coeff[k]) + std::norm(cb.coeff[k]);
      }
      const auto sc = integral(cross, h, w);
      const auto se = integral(energy, h, w);
      double sum = 0.0;
      int count = 0;
      for (int y = 0; y + window <= h; ++y) {
        for (int x = 0; x + window <= w; ++x) {
          const double num = 2.0 * std::abs(box(sc, w, y, x, window)) + K;
          const double den = box(se, w, y, x, window) + K;
          sum += den > 1e-300 ? std::min(1.0, num / den) : 1.0;
          ++count;
        }
      }
      total += sum / count;
      ++bands;
    }
  }
  if (bands == 0) throw ConfigError("cw_ssim: window larger than every subband");
  return total / bands;
}

double windowed_ssim(const Image& a, const Image& b, int window) {
  if (!a.same_shape(b)) throw ConfigError("ssim: image shapes differ");
  const int h = a.height(), w = a.width();
  if (window < 1 || h < window || w < window) throw ConfigError("ssim: window does not fit the image");
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  std::vector<double> va(a.size()), vb(a.size()), vaa(a.size()), vbb(a.size()), vab(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) {
    va[k] = a.data()[k];
    vb[k] = b.data()[k];
    vaa[k] = va[k] * va[k];
    vbb[k] = vb[k] * vb[k];
    vab[k] = va[k] * vb[k];
  }
  const auto sa = integral(va, h, w), sb = integral(vb, h, w);
  const auto saa = integral(vaa, h, w), sbb = integral(vbb, h, w), sab = integral(vab, h, w);
  const double n = static_cast<double>(window) * window;
  double sum = 0.0;
  int count = 0;
  for (int y = 0; y + window <= h; ++y) {
    for (int x = 0; x + window <= w; ++x) {
      const double ma = box(sa, w, y, x, window) / n, mb = box(sb, w, y, x, window) / n;
      const double va_ = box(saa, w, y, x, window) / n - ma * ma;
      const double vb_ = box(sbb, w, y, x, window) / n - mb * mb;
      const double cab = box(sab, w, y, x, window) / n - ma * mb;
      sum += ((2 * ma * mb + C1) * (2 * cab + C2)) / ((ma * ma + mb * mb + C1) * (va_ + vb_ + C2));
      ++count;
    }
  }
  return sum / count;
}

AngleSpread angle_spread(std::span<const double> degrees) {
  if (degrees.empty()) throw ConfigError("angle_spread: no angles");
  double c = 0.0, s = 0.0;
  for (double d : degrees) {
    c += std::cos(d * kPi / 180.0);
    s += std::sin(d * kPi / 180.0);
  }
  c /= degrees.size();
  s /= degrees.size();
  const double R = std::min(1.0, std::hypot(c, s));
  AngleSpread out;
  out.mean_deg = std::atan2(s, c) * 180.0 / kPi;
  out.std_deg = 1.0 - R < 1e-14 ? 0.0 : std::sqrt(-2.0 * std::log(R)) * 180.0 / kPi;
  double lo = 0.0, hi = 0.0;
  for (double d : degrees) {
    const double dev = wrap_angle((d - out.mean_deg) * kPi / 180.0) * 180.0 / kPi;
    lo = std::min(lo, dev);
    hi = std::max(hi, dev);
  }
  out.extreme_deg = hi - lo;
  return out;
}

double rotation_residual_deg(const SimilarityTransform& detected, int quarter_turns) {
  return wrap_angle(detected.theta - quarter_turns * kPi / 2.0) * 180.0 / kPi;
}

RobustnessSummary rotation_robustness(const RegisterFn& register_fn,
                                      std::span<const std::pair<Image, Image>> pairs) {
  RobustnessSummary summary;
  double total = 0.0;
  for (const auto& [moving, fixed] : pairs) {
    RobustnessRecord rec;
    for (int k = 0; k < 4 && !rec.failed; ++k) {
      const auto T = register_fn(rot90(moving, k), fixed);
      if (!T) {
        rec.failed = true;
        break;
      }
      rec.residual_deg[k] = rotation_residual_deg(*T, k);
    }
    if (rec.failed) {
      ++summary.failures;
    } else {
      rec.spread = angle_spread(rec.residual_deg);
      total += rec.spread.std_deg;
      summary.max_std_deg = std::max(summary.max_std_deg, rec.spread.std_deg);
    }
    summary.pairs.push_back(rec);
  }
  const int ok = static_cast<int>(summary.pairs.size()) - summary.failures;
  summary.mean_std_deg = ok > 0 ? total / ok : 0.0;
  return summary;
}

}  // namespace rotir
