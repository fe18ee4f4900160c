#include "rotir/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <memory>
#include <numbers>
#include <string>

namespace rotir {

float sample_bilinear(const Image& img, double x, double y, float fill) {
  // Array coordinates: pixel (r, c) sits at (c + 0.5, r + 0.5).
  const double ax = x - 0.5;
  const double ay = y - 0.5;
  const double fx0 = std::floor(ax);
  const double fy0 = std::floor(ay);
  const int x0 = static_cast<int>(fx0);
  const int y0 = static_cast<int>(fy0);
  const double fx = ax - fx0;
  const double fy = ay - fy0;
  auto at = [&](int yy, int xx) -> double {
    if (xx < 0 || yy < 0 || xx >= img.width() || yy >= img.height()) return fill;
    return img(yy, xx);
  };
  double v = 0.0;
  if (fx == 0.0 && fy == 0.0) return static_cast<float>(at(y0, x0));
  v += (1.0 - fx) * (1.0 - fy) * at(y0, x0);
  v += fx * (1.0 - fy) * at(y0, x0 + 1);
  v += (1.0 - fx) * fy * at(y0 + 1, x0);
  v += fx * fy * at(y0 + 1, x0 + 1);
  return static_cast<float>(v);
}

Image warp(const Image& img, const SimilarityTransform& T, float fill) {
  return warp_to(img, T, img.height(), img.width(), fill);
}

Image warp_to(const Image& img, const SimilarityTransform& T, int height, int width, float fill) {
  const Matrix2x3 m = to_matrix(invert(T));
  Image out(height, width);
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const double x = c + 0.5;
      const double y = r + 0.5;
      out(r, c) = sample_bilinear(img, m[0] * x + m[1] * y + m[2], m[3] * x + m[4] * y + m[5], fill);
    }
  }
  return out;
}

BinaryMask warp_mask(const BinaryMask& mask, const SimilarityTransform& T, double threshold_level) {
  return threshold(warp(to_image(mask), T, 0.0f), static_cast<float>(threshold_level));
}

Image rot90(const Image& img, int quarter_turns) {
  if (img.height() != img.width()) throw ConfigError("rot90: image must be square");
  const int n = img.width();
  const int k = ((quarter_turns % 4) + 4) % 4;
  Image out(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      switch (k) {
        case 0: out(i, j) = img(i, j); break;
        case 1: out(i, j) = img(j, n - 1 - i); break;
        case 2: out(i, j) = img(n - 1 - i, n - 1 - j); break;
        default: out(i, j) = img(n - 1 - j, i); break;
      }
    }
  }
  return out;
}

SimilarityTransform rot90_transform(int quarter_turns, int size) {
  SimilarityTransform T;
  T.center = {size / 2.0, size / 2.0};
  T.theta = wrap_angle(-quarter_turns * std::numbers::pi / 2.0);
  return T;
}

Image resize_square(const Image& img, int size, double* factor) {
  if (img.empty()) throw ConfigError("resize_square: empty image");
  if (img.height() != img.width()) throw ConfigError("resize_square: image must be square");
  const double f = static_cast<double>(size) / img.width();
  if (factor) *factor = f;
  if (img.width() == size) return img;
  Image out(size, size);
  for (int r = 0; r < size; ++r) {
    for (int c = 0; c < size; ++c) {
      out(r, c) = sample_bilinear(img, (c + 0.5) / f, (r + 0.5) / f, 0.0f);
    }
  }
  return out;
}

BinaryMask threshold(const Image& img, float level) {
  BinaryMask m(img.height(), img.width());
  for (std::size_t k = 0; k < img.size(); ++k) m.data()[k] = img.data()[k] >= level ? 1 : 0;
  return m;
}

Image to_image(const BinaryMask& mask) {
  Image img(mask.height(), mask.width());
  for (std::size_t k = 0; k < mask.size(); ++k) img.data()[k] = mask.data()[k] ? 1.0f : 0.0f;
  return img;
}

std::size_t count_nonzero(const BinaryMask& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.values().begin(), mask.values().end(), [](std::uint8_t v) { return v != 0; }));
}

void RgbImage::set(int y, int x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  const std::size_t k = (static_cast<std::size_t>(y) * width + x) * 3;
  rgb[k] = r;
  rgb[k + 1] = g;
  rgb[k + 2] = b;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw ConfigError("cannot open '" + path.string() + "'");
  return f;
}

void png_warn(png_structp, png_const_charp) {}

void write_rows(const std::filesystem::path& path, int width, int height, int bit_depth,
                int color_type, const std::vector<png_bytep>& rows) {
  FilePtr f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw ConfigError("png: failed writing '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  png_write_image(png, const_cast<png_bytepp>(rows.data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_png(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  std::vector<png_byte> buf;
  std::vector<png_bytep> rows;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ConfigError("png: failed reading '" + path.string() + "'");
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE) {
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  }
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);
  png_read_update_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * height);
  rows.resize(height);
  for (int r = 0; r < height; ++r) rows[r] = buf.data() + r * rowbytes;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  Image img(height, width);
  const double maxv = depth == 16 ? 65535.0 : 255.0;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      double v;
      if (depth == 16) {
        std::uint16_t s;
        std::memcpy(&s, rows[r] + 2 * c, 2);
        v = s;
      } else {
        v = rows[r][c];
      }
      img(r, c) = static_cast<float>(v / maxv);
    }
  }
  return img;
}

void write_png(const std::filesystem::path& path, const Image& img, bool eight_bit) {
  const int bytes = eight_bit ? 1 : 2;
  std::vector<png_byte> buf(img.size() * bytes);
  std::vector<png_bytep> rows(img.height());
  for (int r = 0; r < img.height(); ++r) {
    rows[r] = buf.data() + static_cast<std::size_t>(r) * img.width() * bytes;
    for (int c = 0; c < img.width(); ++c) {
      const double v = std::clamp(static_cast<double>(img(r, c)), 0.0, 1.0);
      if (eight_bit) {
        rows[r][c] = static_cast<png_byte>(std::lround(v * 255.0));
      } else {
        const auto s = static_cast<std::uint16_t>(std::lround(v * 65535.0));
        std::memcpy(rows[r] + 2 * c, &s, 2);
      }
    }
  }
  write_rows(path, img.width(), img.height(), eight_bit ? 8 : 16, PNG_COLOR_TYPE_GRAY, rows);
}

void write_png(const std::filesystem::path& path, const RgbImage& img) {
  std::vector<png_bytep> rows(img.height);
  auto* base = const_cast<std::uint8_t*>(img.rgb.data());
  for (int r = 0; r < img.height; ++r) rows[r] = base + static_cast<std::size_t>(r) * img.width * 3;
  write_rows(path, img.width, img.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

}  // namespace rotir
