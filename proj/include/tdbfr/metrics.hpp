#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "tdbfr/image.hpp"

namespace tdbfr {

inline double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

/// 10 log10(peak^2 / MSE); +infinity for identical images.
inline double psnr(const Image& a, const Image& b, double peak = 1.0) {
  if (!(peak > 0.0)) throw std::invalid_argument("psnr: peak must be positive");
  const double m = mse(a, b);
  if (m == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / m);
}

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over all fully-contained windows (no padding), averaged over channels.
/// Local moments use a normalized Gaussian window.
inline double ssim(const Image& a, const Image& b, const SsimParams& p = {}) {
  require_same_shape(a, b, "ssim");
  if (a.width() < p.window || a.height() < p.window) {
    throw std::invalid_argument("ssim: image smaller than the window");
  }
  const int r = p.window / 2;
  std::vector<double> g(static_cast<std::size_t>(p.window));
  double gsum = 0.0;
  for (int i = 0; i < p.window; ++i) {
    g[i] = std::exp(-((i - r) * (i - r)) / (2.0 * p.sigma * p.sigma));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;

  const double c1 = (p.k1 * p.dynamic_range) * (p.k1 * p.dynamic_range);
  const double c2 = (p.k2 * p.dynamic_range) * (p.k2 * p.dynamic_range);
  const int ow = a.width() - p.window + 1;
  const int oh = a.height() - p.window + 1;

  double total = 0.0;
  for (int c = 0; c < a.channels(); ++c) {
    double channel_sum = 0.0;
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
        for (int dy = 0; dy < p.window; ++dy) {
          for (int dx = 0; dx < p.window; ++dx) {
            const double w = g[dy] * g[dx];
            const double va = a.at(c, y + dy, x + dx);
            const double vb = b.at(c, y + dy, x + dx);
            ma += w * va;
            mb += w * vb;
            saa += w * va * va;
            sbb += w * vb * vb;
            sab += w * va * vb;
          }
        }
        const double var_a = saa - ma * ma;
        const double var_b = sbb - mb * mb;
        const double cov = sab - ma * mb;
        channel_sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                       ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
      }
    }
    total += channel_sum / (static_cast<double>(ow) * oh);
  }
  return total / a.channels();
}

struct ImageMetrics {
  double psnr_db = 0.0;
  double ssim = 0.0;
  double mse = 0.0;
};

/// Per-image metrics plus their aggregate mean and standard deviation.
struct MetricReport {
  std::vector<ImageMetrics> images;
  ImageMetrics mean;
  ImageMetrics stddev;

  void add(const ImageMetrics& m) { images.push_back(m); }

  void finalize() {
    mean = {};
    stddev = {};
    const double n = static_cast<double>(images.size());
    if (images.empty()) return;
    for (const auto& m : images) {
      mean.psnr_db += m.psnr_db / n;
      mean.ssim += m.ssim / n;
      mean.mse += m.mse / n;
    }
    if (images.size() < 2) return;
    for (const auto& m : images) {
      stddev.psnr_db += (m.psnr_db - mean.psnr_db) * (m.psnr_db - mean.psnr_db);
      stddev.ssim += (m.ssim - mean.ssim) * (m.ssim - mean.ssim);
      stddev.mse += (m.mse - mean.mse) * (m.mse - mean.mse);
    }
    stddev.psnr_db = std::sqrt(stddev.psnr_db / (n - 1));
    stddev.ssim = std::sqrt(stddev.ssim / (n - 1));
    stddev.mse = std::sqrt(stddev.mse / (n - 1));
  }
};

/// Display-range metrics after clamping both images to [0, 1].
inline ImageMetrics evaluate_pair(const Image& restored, const Image& reference) {
  const Image a = clamped(to_display_range(restored), 0.0, 1.0);
  const Image b = clamped(to_display_range(reference), 0.0, 1.0);
  ImageMetrics m;
  m.mse = mse(a, b);
  m.psnr_db = psnr(a, b, 1.0);
  m.ssim = ssim(a, b);
  return m;
}

}  // namespace tdbfr
