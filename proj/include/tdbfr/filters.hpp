#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdbfr/image.hpp"

namespace tdbfr {

/// Down/up-sampling factor N of the low-pass operator.
struct FilterFactor {
  int n = 1;

  bool operator==(const FilterFactor&) const = default;
};

/// Interpolation used on the way back up. The way down is always an area average.
enum class FilterKernel { area_bilinear, area_bicubic };

inline const char* to_string(FilterKernel k) {
  return k == FilterKernel::area_bilinear ? "area_bilinear" : "area_bicubic";
}

inline FilterKernel filter_kernel_from_string(const std::string& s) {
  if (s == "area_bilinear") return FilterKernel::area_bilinear;
  if (s == "area_bicubic") return FilterKernel::area_bicubic;
  throw std::invalid_argument("unknown filter kernel '" + s + "'");
}

namespace detail {

enum class Axis { x, y };

// Sparse 1-D resampling matrix: out[j] = sum_k weights[j][k].second * in[weights[j][k].first].
using Taps = std::vector<std::vector<std::pair<int, double>>>;

// Box integration over the footprint of each output pixel.
inline Taps area_taps(int in, int out) {
  Taps taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int j = 0; j < out; ++j) {
    const double lo = j * scale;
    const double hi = (j + 1) * scale;
    for (int i = static_cast<int>(std::floor(lo)); i < std::min(in, static_cast<int>(std::ceil(hi))); ++i) {
      const double overlap = std::min(hi, i + 1.0) - std::max(lo, static_cast<double>(i));
      if (overlap > 0.0) taps[j].emplace_back(i, overlap / scale);
    }
  }
  return taps;
}

// Half-pixel-centred linear interpolation with edge clamping.
inline Taps bilinear_taps(int in, int out) {
  Taps taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int j = 0; j < out; ++j) {
    const double src = std::clamp((j + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(src));
    const int i1 = std::min(i0 + 1, in - 1);
    const double w1 = src - i0;
    if (i1 == i0 || w1 == 0.0) {
      taps[j].emplace_back(i0, 1.0);
    } else {
      taps[j].emplace_back(i0, 1.0 - w1);
      taps[j].emplace_back(i1, w1);
    }
  }
  return taps;
}

// Keys cubic convolution (a = -0.5), clamped borders. Weights sum to one.
inline Taps bicubic_taps(int in, int out) {
  auto kernel = [](double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
  };
  Taps taps(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int j = 0; j < out; ++j) {
    const double src = (j + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(src));
    for (int k = -1; k <= 2; ++k) {
      const double w = kernel(src - (base + k));
      if (w == 0.0) continue;
      taps[j].emplace_back(std::clamp(base + k, 0, in - 1), w);
    }
  }
  return taps;
}

inline Image apply_taps(const Image& img, const Taps& taps, Axis axis) {
  const int out_w = axis == Axis::x ? static_cast<int>(taps.size()) : img.width();
  const int out_h = axis == Axis::y ? static_cast<int>(taps.size()) : img.height();
  Image out(out_w, out_h, img.channels(), img.range());
  for (int c = 0; c < img.channels(); ++c) {
    for (int y = 0; y < out_h; ++y) {
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        if (axis == Axis::x) {
          for (auto [i, w] : taps[x]) acc += w * img.at(c, y, i);
        } else {
          for (auto [i, w] : taps[y]) acc += w * img.at(c, i, x);
        }
        out.at(c, y, x) = acc;
      }
    }
  }
  return out;
}

inline Image resample_axis(const Image& img, int out, Axis axis, FilterKernel up_kernel) {
  const int in = axis == Axis::x ? img.width() : img.height();
  if (out == in) return img;
  if (out < in) return apply_taps(img, area_taps(in, out), axis);
  return apply_taps(img,
                    up_kernel == FilterKernel::area_bicubic ? bicubic_taps(in, out)
                                                            : bilinear_taps(in, out),
                    axis);
}

}  // namespace detail

/// Separable resampling: area average along shrinking axes, bilinear (or
/// bicubic) interpolation along growing axes. Linear in pixel values.
inline Image resize(const Image& img, int new_width, int new_height,
                    FilterKernel kernel = FilterKernel::area_bilinear) {
  if (new_width <= 0 || new_height <= 0) {
    throw std::invalid_argument("resize: target dimensions must be positive");
  }
  Image tmp = detail::resample_axis(img, new_width, detail::Axis::x, kernel);
  return detail::resample_axis(tmp, new_height, detail::Axis::y, kernel);
}

inline void check_divisible(const Image& img, FilterFactor f) {
  if (f.n < 1) throw std::invalid_argument("filter factor must be >= 1");
  if (img.width() % f.n != 0 || img.height() % f.n != 0) {
    throw std::invalid_argument("filter factor " + std::to_string(f.n) +
                                " does not divide image " + shape_string(img));
  }
}

inline Image area_downsample(const Image& img, FilterFactor f) {
  check_divisible(img, f);
  return resize(img, img.width() / f.n, img.height() / f.n);
}

/// Phi_N: area downsample by N, then interpolate back to the input size.
inline Image lowpass(const Image& img, FilterFactor f,
                     FilterKernel kernel = FilterKernel::area_bilinear) {
  check_divisible(img, f);
  if (f.n == 1) return img;
  return resize(resize(img, img.width() / f.n, img.height() / f.n, kernel), img.width(),
                img.height(), kernel);
}

/// (I - Phi_N) img.
inline Image highpass_residual(const Image& img, FilterFactor f,
                               FilterKernel kernel = FilterKernel::area_bilinear) {
  return img - lowpass(img, f, kernel);
}

/// Phi_N(y) + (I - Phi_N)(x): x with its low band replaced by y's.
inline Image freq_swap(const Image& x, const Image& y, FilterFactor f,
                       FilterKernel kernel = FilterKernel::area_bilinear) {
  require_same_shape(x, y, "freq_swap");
  if (f.n == 1) {
    check_divisible(x, f);
    return y;
  }
  const Image low_y = lowpass(y, f, kernel);
  const Image low_x = lowpass(x, f, kernel);
  Image out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + (low_y[i] - low_x[i]);
  return out;
}

}  // namespace tdbfr
