#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "rotir/error.hpp"
#include "rotir/geometry.hpp"

namespace rotir {

/// Dense row-major 2-D array.
template <typename T>
class Array2D {
 public:
  Array2D() = default;
  Array2D(int height, int width, T fill = T{})
      : height_(height), width_(width), data_(static_cast<std::size_t>(height) * width, fill) {
    if (height < 0 || width < 0) throw ConfigError("Array2D: negative extent");
  }

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(int y, int x) { return data_[static_cast<std::size_t>(y) * width_ + x]; }
  const T& operator()(int y, int x) const { return data_[static_cast<std::size_t>(y) * width_ + x]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  bool same_shape(const Array2D& other) const {
    return height_ == other.height_ && width_ == other.width_;
  }

  friend bool operator==(const Array2D&, const Array2D&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<T> data_;
};

/// Single-channel intensity image, nominally in [0, 1].
using Image = Array2D<float>;
/// Binary mask with values in {0, 1}.
using BinaryMask = Array2D<std::uint8_t>;

/// Bilinear sample at continuous pixel coordinates (pixel centers at half-integers).
/// Samples falling outside the image contribute `fill`.
float sample_bilinear(const Image& img, double x, double y, float fill = 0.0f);

/// Inverse-warp: out(p) = img(T^-1 p), bilinear, `fill` outside.
Image warp(const Image& img, const SimilarityTransform& T, float fill = 0.0f);
/// Same, into an output frame of the given size.
Image warp_to(const Image& img, const SimilarityTransform& T, int height, int width, float fill = 0.0f);
/// Warp a mask bilinearly and re-binarize at `threshold`.
BinaryMask warp_mask(const BinaryMask& mask, const SimilarityTransform& T, double threshold = 0.5);

/// Exact quarter-turn rotation of a square image (same convention as torch.rot90 on (H, W)).
Image rot90(const Image& img, int quarter_turns);
/// Similarity transform that corresponds to `rot90` by `quarter_turns` about the image center.
SimilarityTransform rot90_transform(int quarter_turns, int size);

/// Isotropic bilinear resize to size x size; returns the factor new/old.
Image resize_square(const Image& img, int size, double* factor = nullptr);

BinaryMask threshold(const Image& img, float level);
Image to_image(const BinaryMask& mask);
std::size_t count_nonzero(const BinaryMask& mask);

/// Reads 8- or 16-bit grayscale (or RGB, converted to luminance) PNG into [0, 1].
Image read_png(const std::filesystem::path& path);
/// Writes a 16-bit grayscale PNG (8-bit when `eight_bit`); values clamped to [0, 1].
void write_png(const std::filesystem::path& path, const Image& img, bool eight_bit = false);

/// 8-bit RGB raster for overlays.
struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;  // row-major, 3 bytes per pixel

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), rgb(static_cast<std::size_t>(h) * w * 3, 0) {}
  void set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};
void write_png(const std::filesystem::path& path, const RgbImage& img);

}  // namespace rotir
