#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tdbfr {

/// Value convention of an Image. Diffusion states live in `model` ([-1, 1]);
/// degradation and metrics work in `display` ([0, 1]).
enum class ValueRange { model, display };

/// Planar floating-point raster. Pixel (c, y, x) is stored at
/// `(c * height + y) * width + x`.
class Image {
 public:
  Image() = default;

  Image(int width, int height, int channels = 1,
        ValueRange range = ValueRange::model, double fill = 0.0)
      : width_(width), height_(height), channels_(channels), range_(range) {
    if (width <= 0 || height <= 0) {
      throw std::invalid_argument("image dimensions must be positive");
    }
    if (channels != 1 && channels != 3) {
      throw std::invalid_argument("image must have 1 or 3 channels");
    }
    pixels_.assign(static_cast<std::size_t>(width) * height * channels, fill);
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  int channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }
  std::size_t plane_size() const noexcept {
    return static_cast<std::size_t>(width_) * height_;
  }

  ValueRange range() const noexcept { return range_; }
  void set_range(ValueRange r) noexcept { range_ = r; }

  double& at(int c, int y, int x) noexcept {
    return pixels_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  double at(int c, int y, int x) const noexcept {
    return pixels_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }

  double& operator[](std::size_t i) noexcept { return pixels_[i]; }
  double operator[](std::size_t i) const noexcept { return pixels_[i]; }

  std::span<double> plane(int c) noexcept {
    return {pixels_.data() + c * plane_size(), plane_size()};
  }
  std::span<const double> plane(int c) const noexcept {
    return {pixels_.data() + c * plane_size(), plane_size()};
  }

  std::vector<double>& pixels() noexcept { return pixels_; }
  const std::vector<double>& pixels() const noexcept { return pixels_; }

  bool same_shape(const Image& o) const noexcept {
    return width_ == o.width_ && height_ == o.height_ && channels_ == o.channels_;
  }

  bool operator==(const Image&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  ValueRange range_ = ValueRange::model;
  std::vector<double> pixels_;
};

inline std::string shape_string(const Image& img) {
  return std::to_string(img.width()) + "x" + std::to_string(img.height()) + "x" +
         std::to_string(img.channels());
}

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch (" +
                                shape_string(a) + " vs " + shape_string(b) + ")");
  }
}

// Elementwise helpers. All of them keep the range tag of the first operand.

inline Image operator+(const Image& a, const Image& b) {
  require_same_shape(a, b, "image add");
  Image out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

inline Image operator-(const Image& a, const Image& b) {
  require_same_shape(a, b, "image subtract");
  Image out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

inline Image operator*(double s, const Image& a) {
  Image out = a;
  for (double& v : out.pixels()) v *= s;
  return out;
}

/// Returns `a * x + b * y`.
inline Image linear_combination(double a, const Image& x, double b, const Image& y) {
  require_same_shape(x, y, "linear combination");
  Image out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x[i] + b * y[i];
  return out;
}

inline Image add_scalar(const Image& a, double c) {
  Image out = a;
  for (double& v : out.pixels()) v += c;
  return out;
}

inline double mean(const Image& img) {
  double s = 0.0;
  for (double v : img.pixels()) s += v;
  return s / static_cast<double>(img.size());
}

inline double sum_squares(const Image& img) {
  double s = 0.0;
  for (double v : img.pixels()) s += v * v;
  return s;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  require_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

inline bool all_finite(const Image& img) {
  return std::all_of(img.pixels().begin(), img.pixels().end(),
                     [](double v) { return std::isfinite(v); });
}

inline Image clamped(const Image& img, double lo, double hi) {
  Image out = img;
  for (double& v : out.pixels()) v = std::clamp(v, lo, hi);
  return out;
}

/// [0, 1] -> [-1, 1]. No clamping.
inline Image to_model_range(const Image& img) {
  if (img.range() == ValueRange::model) return img;
  Image out = img;
  for (double& v : out.pixels()) v = 2.0 * v - 1.0;
  out.set_range(ValueRange::model);
  return out;
}

/// [-1, 1] -> [0, 1]. No clamping; export paths clamp separately.
inline Image to_display_range(const Image& img) {
  if (img.range() == ValueRange::display) return img;
  Image out = img;
  for (double& v : out.pixels()) v = 0.5 * (v + 1.0);
  out.set_range(ValueRange::display);
  return out;
}

}  // namespace tdbfr
