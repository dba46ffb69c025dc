#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "tdbfr/image.hpp"

namespace tdbfr {

namespace jpeg {

// Annex K example tables, natural (row-major) order.
inline constexpr std::array<int, 64> kLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

inline constexpr std::array<int, 64> kChrominanceTable = {
    17, 18, 24, 47, 99, 99, 99, 99, 18, 21, 26, 66, 99, 99, 99, 99,
    24, 26, 56, 99, 99, 99, 99, 99, 47, 66, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99,
    99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99, 99};

/// libjpeg's quality -> percentage scaling.
inline int quality_scale(int quality) {
  if (quality < 1 || quality > 100) throw std::invalid_argument("jpeg quality must be in [1, 100]");
  return quality < 50 ? 5000 / quality : 200 - 2 * quality;
}

/// Base table scaled for `quality`, entries clamped to [1, 255].
inline std::array<int, 64> scaled_table(const std::array<int, 64>& base, int quality) {
  const long scale = quality_scale(quality);
  std::array<int, 64> out{};
  for (std::size_t i = 0; i < 64; ++i) {
    const long v = (base[i] * scale + 50L) / 100L;
    out[i] = static_cast<int>(std::clamp(v, 1L, 255L));
  }
  return out;
}

using Block = std::array<double, 64>;

inline const std::array<double, 64>& dct_basis() {
  static const std::array<double, 64> basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u) {
      const double c = u == 0 ? std::sqrt(0.125) : 0.5;
      for (int x = 0; x < 8; ++x) {
        b[u * 8 + x] = c * std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
      }
    }
    return b;
  }();
  return basis;
}

// Orthonormal 2-D DCT-II (same scaling as the JPEG FDCT).
inline Block forward_dct(const Block& in) {
  const auto& b = dct_basis();
  Block tmp{};
  Block out{};
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += b[u * 8 + x] * in[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += b[v * 8 + y] * tmp[y * 8 + u];
      out[v * 8 + u] = s;
    }
  return out;
}

inline Block inverse_dct(const Block& in) {
  const auto& b = dct_basis();
  Block tmp{};
  Block out{};
  for (int v = 0; v < 8; ++v)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += b[u * 8 + x] * in[v * 8 + u];
      tmp[v * 8 + x] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += b[v * 8 + y] * tmp[v * 8 + x];
      out[y * 8 + x] = s;
    }
  return out;
}

inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Quantize/dequantize every 8x8 block of a level-shifted plane in place.
inline void quantize_plane(std::vector<double>& plane, int w, int h,
                           const std::array<int, 64>& table) {
  for (int by = 0; by < h; by += 8) {
    for (int bx = 0; bx < w; bx += 8) {
      Block blk{};
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) blk[y * 8 + x] = plane[(by + y) * w + bx + x];
      Block coef = forward_dct(blk);
      for (int i = 0; i < 64; ++i) coef[i] = std::round(coef[i] / table[i]) * table[i];
      const Block rec = inverse_dct(coef);
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) plane[(by + y) * w + bx + x] = rec[y * 8 + x];
    }
  }
}

}  // namespace jpeg

/// Pixel-domain effect of baseline JPEG at `quality` on a display-range image.
///
/// Three-channel input goes through full-range JFIF YCbCr (no chroma
/// subsampling). Each plane is level shifted, transformed in 8x8 blocks,
/// quantized with the quality-scaled Annex K tables and reconstructed.
/// Dimensions that are not multiples of 8 are reflect-padded and cropped back.
/// The result is clamped to [0, 1] like a decoded 8-bit image, but not rounded
/// to 8-bit levels.
inline Image jpeg_transform(const Image& img, int quality) {
  const auto luma = jpeg::scaled_table(jpeg::kLuminanceTable, quality);
  const auto chroma = jpeg::scaled_table(jpeg::kChrominanceTable, quality);

  const int w = img.width();
  const int h = img.height();
  const int pw = (w + 7) / 8 * 8;
  const int ph = (h + 7) / 8 * 8;
  const std::size_t pn = static_cast<std::size_t>(pw) * ph;

  std::vector<std::vector<double>> planes(static_cast<std::size_t>(img.channels()),
                                          std::vector<double>(pn));
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x)
        planes[c][y * pw + x] =
            255.0 * img.at(c, jpeg::reflect_index(y, h), jpeg::reflect_index(x, w));

  if (img.channels() == 3) {
    for (std::size_t i = 0; i < pn; ++i) {
      const double r = planes[0][i], g = planes[1][i], b = planes[2][i];
      planes[0][i] = 0.299 * r + 0.587 * g + 0.114 * b - 128.0;
      planes[1][i] = -0.168736 * r - 0.331264 * g + 0.5 * b;
      planes[2][i] = 0.5 * r - 0.418688 * g - 0.081312 * b;
    }
    jpeg::quantize_plane(planes[0], pw, ph, luma);
    jpeg::quantize_plane(planes[1], pw, ph, chroma);
    jpeg::quantize_plane(planes[2], pw, ph, chroma);
    for (std::size_t i = 0; i < pn; ++i) {
      const double yy = planes[0][i] + 128.0, cb = planes[1][i], cr = planes[2][i];
      planes[0][i] = yy + 1.402 * cr;
      planes[1][i] = yy - 0.344136 * cb - 0.714136 * cr;
      planes[2][i] = yy + 1.772 * cb;
    }
  } else {
    for (double& v : planes[0]) v -= 128.0;
    jpeg::quantize_plane(planes[0], pw, ph, luma);
    for (double& v : planes[0]) v += 128.0;
  }

  Image out(w, h, img.channels(), img.range());
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out.at(c, y, x) = std::clamp(planes[c][y * pw + x], 0.0, 255.0) / 255.0;
  return out;
}

}  // namespace tdbfr
