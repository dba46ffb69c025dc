#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdbfr/filters.hpp"
#include "tdbfr/image.hpp"
#include "tdbfr/jpeg.hpp"
#include "tdbfr/rng.hpp"

namespace tdbfr {

enum class BlurKind { gaussian, mean, median, motion };

inline const char* to_string(BlurKind k) {
  switch (k) {
    case BlurKind::gaussian: return "gaussian";
    case BlurKind::mean: return "mean";
    case BlurKind::median: return "median";
    case BlurKind::motion: return "motion";
  }
  return "?";
}

inline BlurKind blur_kind_from_string(const std::string& s) {
  if (s == "gaussian") return BlurKind::gaussian;
  if (s == "mean") return BlurKind::mean;
  if (s == "median") return BlurKind::median;
  if (s == "motion") return BlurKind::motion;
  throw std::invalid_argument("unknown blur kind '" + s + "'");
}

/// Largest kernel each blur kind accepts.
inline int max_kernel_size(BlurKind k) { return k == BlurKind::motion ? 25 : 15; }

namespace detail {

inline int reflect101(int i, int n) { return jpeg::reflect_index(i, n); }

inline Image convolve(const Image& img, const std::vector<double>& kernel, int size) {
  const int r = size / 2;
  Image out(img.width(), img.height(), img.channels(), img.range());
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        double acc = 0.0;
        for (int ky = 0; ky < size; ++ky) {
          const int sy = reflect101(y + ky - r, img.height());
          for (int kx = 0; kx < size; ++kx) {
            const double w = kernel[ky * size + kx];
            if (w != 0.0) acc += w * img.at(c, sy, reflect101(x + kx - r, img.width()));
          }
        }
        out.at(c, y, x) = acc;
      }
  return out;
}

inline Image median_filter(const Image& img, int size) {
  const int r = size / 2;
  Image out(img.width(), img.height(), img.channels(), img.range());
  std::vector<double> window(static_cast<std::size_t>(size * size));
  for (int c = 0; c < img.channels(); ++c)
    for (int y = 0; y < img.height(); ++y)
      for (int x = 0; x < img.width(); ++x) {
        std::size_t k = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            window[k++] = img.at(c, reflect101(y + dy, img.height()),
                                 reflect101(x + dx, img.width()));
        auto mid = window.begin() + static_cast<std::ptrdiff_t>(window.size() / 2);
        std::nth_element(window.begin(), mid, window.end());
        out.at(c, y, x) = *mid;
      }
  return out;
}

}  // namespace detail

/// Normalized size x size kernel for the linear blur kinds. Gaussian uses
/// sigma = size / 6; motion is a one-pixel line through the centre at
/// `angle_deg`, rasterized by nearest-pixel sampling.
inline std::vector<double> blur_kernel(BlurKind kind, int size, double angle_deg = 0.0) {
  std::vector<double> k(static_cast<std::size_t>(size * size), 0.0);
  const int r = size / 2;
  switch (kind) {
    case BlurKind::gaussian: {
      const double sigma = size / 6.0;
      for (int y = -r; y <= r; ++y)
        for (int x = -r; x <= r; ++x)
          k[(y + r) * size + x + r] = std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
      break;
    }
    case BlurKind::mean:
      std::fill(k.begin(), k.end(), 1.0);
      break;
    case BlurKind::motion: {
      const double a = angle_deg * std::numbers::pi / 180.0;
      const int samples = 4 * size;
      for (int s = 0; s <= samples; ++s) {
        const double d = -r + 2.0 * r * s / samples;
        const int x = static_cast<int>(std::lround(d * std::cos(a)));
        const int y = static_cast<int>(std::lround(-d * std::sin(a)));
        k[(y + r) * size + x + r] = 1.0;
      }
      break;
    }
    case BlurKind::median:
      throw std::invalid_argument("median blur has no linear kernel");
  }
  double sum = 0.0;
  for (double v : k) sum += v;
  for (double& v : k) v /= sum;
  return k;
}

/// Blurs with reflect-101 borders. `kernel_size` must be odd and at most
/// max_kernel_size(kind); size 1 is the identity.
inline Image blur(const Image& img, BlurKind kind, int kernel_size, double angle_deg = 0.0) {
  if (kernel_size < 1 || kernel_size % 2 == 0 || kernel_size > max_kernel_size(kind)) {
    throw std::invalid_argument(std::string("invalid ") + to_string(kind) + " kernel size " +
                                std::to_string(kernel_size));
  }
  if (kernel_size == 1) return img;
  if (kind == BlurKind::median) return detail::median_filter(img, kernel_size);
  return detail::convolve(img, blur_kernel(kind, kernel_size, angle_deg), kernel_size);
}

inline Image downsample(const Image& img, int r) { return area_downsample(img, FilterFactor{r}); }

/// img + sigma * eps. No clamping.
inline Image add_gaussian_noise(const Image& img, double sigma, SeededRng& rng) {
  if (sigma < 0.0) throw std::invalid_argument("noise sigma must be >= 0");
  if (sigma == 0.0) return img;
  Image out = img;
  for (double& v : out.pixels()) v += sigma * rng.normal();
  return out;
}

/// Photon noise: each display-range intensity v is replaced by
/// Poisson(v * peak) / peak with peak = 255 / strength. strength 0 is the identity.
inline Image add_poisson_noise(const Image& img, double strength, SeededRng& rng) {
  if (strength < 0.0) throw std::invalid_argument("poisson strength must be >= 0");
  if (strength == 0.0) return img;
  const double peak = 255.0 / strength;
  Image out = img;
  for (double& v : out.pixels()) {
    v = static_cast<double>(rng.poisson(std::max(v, 0.0) * peak)) / peak;
  }
  return out;
}

struct DegradationConfig {
  double blur_prob = 0.5;
  std::vector<BlurKind> blur_kinds = {BlurKind::gaussian, BlurKind::mean, BlurKind::median};
  int blur_min = 3;
  int blur_max = 15;
  double motion_prob = 0.5;
  int motion_min = 5;
  int motion_max = 25;
  int downsample = 8;
  double noise_prob = 0.2;
  double noise_sigma_min = 0.0;
  double noise_sigma_max = 0.1;
  double poisson_prob = 0.0;
  double poisson_min = 0.0;
  double poisson_max = 10.0;
  double jpeg_prob = 0.7;
  int jpeg_min = 10;
  int jpeg_max = 65;

  bool operator==(const DegradationConfig&) const = default;

  void validate() const {
    for (double p : {blur_prob, motion_prob, noise_prob, poisson_prob, jpeg_prob}) {
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("degradation probability outside [0, 1]");
    }
    auto check_kernel = [](int lo, int hi, int legal_lo, int legal_hi, const char* what) {
      if (lo % 2 == 0 || hi % 2 == 0 || lo > hi || lo < legal_lo || hi > legal_hi) {
        throw std::invalid_argument(std::string(what) + " kernel range must be odd within [" +
                                    std::to_string(legal_lo) + ", " + std::to_string(legal_hi) + "]");
      }
    };
    if (blur_prob > 0.0) {
      if (blur_kinds.empty()) throw std::invalid_argument("blur_kinds is empty");
      for (BlurKind k : blur_kinds)
        if (k == BlurKind::motion) throw std::invalid_argument("motion blur has its own probability");
      check_kernel(blur_min, blur_max, 3, 15, "blur");
    }
    if (motion_prob > 0.0) check_kernel(motion_min, motion_max, 5, 25, "motion blur");
    if (downsample < 1) throw std::invalid_argument("downsample factor must be >= 1");
    if (noise_sigma_min < 0.0 || noise_sigma_min > noise_sigma_max)
      throw std::invalid_argument("bad noise sigma range");
    if (poisson_min < 0.0 || poisson_min > poisson_max)
      throw std::invalid_argument("bad poisson range");
    if (jpeg_min < 1 || jpeg_max > 100 || jpeg_min > jpeg_max)
      throw std::invalid_argument("jpeg quality range must lie in [1, 100]");
  }
};

/// Training degradations: blur 50% ({gaussian, mean, median}, 3-15), motion
/// blur 50% (5-25), r = 8, Gaussian noise 20% with sigma in [0, 0.1] (display
/// units, i.e. up to 0.1 * 255 levels), JPEG 70% with q in [10, 65].
inline DegradationConfig train_ffhq_style_preset() { return {}; }

/// Test-set degradations: Gaussian blur 50% (3-9), r = 8, Gaussian noise
/// 5-30 levels and Poisson noise 0-10, each with probability 0.5, JPEG 50%
/// with q in [30, 95].
inline DegradationConfig celeba_test_preset() {
  DegradationConfig c;
  c.blur_kinds = {BlurKind::gaussian};
  c.blur_max = 9;
  c.motion_prob = 0.0;
  c.noise_prob = 0.5;
  c.noise_sigma_min = 5.0 / 255.0;
  c.noise_sigma_max = 30.0 / 255.0;
  c.poisson_prob = 0.5;
  c.jpeg_prob = 0.5;
  c.jpeg_min = 30;
  c.jpeg_max = 95;
  return c;
}

/// Desk-scale profile for 64-pixel images on a 16/32/64 ladder: the training
/// preset with r = 2, blur kernels capped at 7, no motion blur, and Gaussian
/// noise on every image with sigma in 5-30 levels.
inline DegradationConfig desk_preset() {
  DegradationConfig c;
  c.blur_max = 7;
  c.motion_prob = 0.0;
  c.downsample = 2;
  c.noise_prob = 1.0;
  c.noise_sigma_min = 5.0 / 255.0;
  c.noise_sigma_max = 30.0 / 255.0;
  return c;
}

inline DegradationConfig no_degradation_preset() {
  DegradationConfig c;
  c.blur_prob = 0.0;
  c.motion_prob = 0.0;
  c.downsample = 1;
  c.noise_prob = 0.0;
  c.poisson_prob = 0.0;
  c.jpeg_prob = 0.0;
  return c;
}

inline DegradationConfig degradation_preset(const std::string& name) {
  if (name == "train-ffhq-style") return train_ffhq_style_preset();
  if (name == "celeba-test") return celeba_test_preset();
  if (name == "desk") return desk_preset();
  if (name == "none") return no_degradation_preset();
  throw std::invalid_argument("unknown degradation preset '" + name + "'");
}

/// One applied stage of the degradation pipeline.
struct DegradationStep {
  enum class Op { blur, motion_blur, downsample, gaussian_noise, poisson_noise, jpeg };

  Op op = Op::blur;
  BlurKind blur_kind = BlurKind::gaussian;
  int kernel = 0;          // blur / motion_blur
  double param = 0.0;      // motion angle (deg), noise sigma, poisson strength
  int factor = 0;          // downsample r, jpeg quality
  std::uint64_t seed = 0;  // noise stream

  bool operator==(const DegradationStep&) const = default;
};

struct DegradationRecord {
  std::vector<DegradationStep> steps;

  bool applied(DegradationStep::Op op) const {
    return std::any_of(steps.begin(), steps.end(),
                       [op](const DegradationStep& s) { return s.op == op; });
  }

  bool operator==(const DegradationRecord&) const = default;
};

/// Re-runs a recorded degradation deterministically.
inline Image apply_record(const Image& x, const DegradationRecord& record) {
  Image y = x;
  for (const DegradationStep& s : record.steps) {
    switch (s.op) {
      case DegradationStep::Op::blur: y = blur(y, s.blur_kind, s.kernel); break;
      case DegradationStep::Op::motion_blur:
        y = blur(y, BlurKind::motion, s.kernel, s.param);
        break;
      case DegradationStep::Op::downsample: y = downsample(y, s.factor); break;
      case DegradationStep::Op::gaussian_noise: {
        SeededRng noise(s.seed);
        y = add_gaussian_noise(y, s.param, noise);
        break;
      }
      case DegradationStep::Op::poisson_noise: {
        SeededRng noise(s.seed);
        y = add_poisson_noise(y, s.param, noise);
        break;
      }
      case DegradationStep::Op::jpeg: y = jpeg_transform(y, s.factor); break;
    }
  }
  return y;
}

struct Degraded {
  Image y;
  DegradationRecord record;
};

/// y = [(x * k) downsampled by r + n]_JPEG with every stochastic choice drawn
/// from `rng` and written to the record. Operates in display range.
inline Degraded synthesize(const Image& x, const DegradationConfig& cfg, SeededRng& rng) {
  cfg.validate();
  DegradationRecord rec;
  auto odd_in = [&rng](int lo, int hi) {
    return lo + 2 * static_cast<int>(rng.uniform_int(0, (hi - lo) / 2));
  };
  if (rng.bernoulli(cfg.blur_prob)) {
    DegradationStep s;
    s.op = DegradationStep::Op::blur;
    s.blur_kind = cfg.blur_kinds[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(cfg.blur_kinds.size()) - 1))];
    s.kernel = odd_in(cfg.blur_min, cfg.blur_max);
    rec.steps.push_back(s);
  }
  if (rng.bernoulli(cfg.motion_prob)) {
    DegradationStep s;
    s.op = DegradationStep::Op::motion_blur;
    s.blur_kind = BlurKind::motion;
    s.kernel = odd_in(cfg.motion_min, cfg.motion_max);
    s.param = rng.uniform(0.0, 180.0);
    rec.steps.push_back(s);
  }
  if (cfg.downsample > 1) {
    DegradationStep s;
    s.op = DegradationStep::Op::downsample;
    s.factor = cfg.downsample;
    rec.steps.push_back(s);
  }
  if (rng.bernoulli(cfg.noise_prob)) {
    DegradationStep s;
    s.op = DegradationStep::Op::gaussian_noise;
    s.param = rng.uniform(cfg.noise_sigma_min, cfg.noise_sigma_max);
    s.seed = rng.next_u64();
    rec.steps.push_back(s);
  }
  if (rng.bernoulli(cfg.poisson_prob)) {
    DegradationStep s;
    s.op = DegradationStep::Op::poisson_noise;
    s.param = rng.uniform(cfg.poisson_min, cfg.poisson_max);
    s.seed = rng.next_u64();
    rec.steps.push_back(s);
  }
  if (rng.bernoulli(cfg.jpeg_prob)) {
    DegradationStep s;
    s.op = DegradationStep::Op::jpeg;
    s.factor = static_cast<int>(rng.uniform_int(cfg.jpeg_min, cfg.jpeg_max));
    rec.steps.push_back(s);
  }
  return {apply_record(x, rec), std::move(rec)};
}

}  // namespace tdbfr
