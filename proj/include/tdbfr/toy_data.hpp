#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tdbfr/degrade.hpp"
#include "tdbfr/image.hpp"
#include "tdbfr/rng.hpp"

namespace tdbfr {

struct ToyDataConfig {
  int size = 64;
  int channels = 1;
  double correlation_px = 10.0;  // std of the Gaussian smoothing kernel at `size`
  double mean = 0.5;            // display range
  double stddev = 0.18;
};

/// Stationary Gaussian-process texture in display range: white noise smoothed
/// by a Gaussian kernel (wrap-around borders), rescaled to the requested
/// moments and clamped to [0, 1].
inline Image gaussian_texture(const ToyDataConfig& cfg, SeededRng& rng) {
  const int n = cfg.size;
  const int r = static_cast<int>(std::ceil(3.0 * cfg.correlation_px));
  std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
  double ksum = 0.0;
  for (int i = -r; i <= r; ++i) {
    k[i + r] = std::exp(-(i * i) / (2.0 * cfg.correlation_px * cfg.correlation_px));
    ksum += k[i + r];
  }
  for (double& v : k) v /= ksum;
  auto wrap = [n](int i) { return ((i % n) + n) % n; };

  Image out(n, n, cfg.channels, ValueRange::display);
  for (int c = 0; c < cfg.channels; ++c) {
    std::vector<double> noise(static_cast<std::size_t>(n) * n);
    for (double& v : noise) v = rng.normal();
    std::vector<double> tmp(noise.size());
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * noise[y * n + wrap(x + i)];
        tmp[y * n + x] = acc;
      }
    std::vector<double> field(noise.size());
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        double acc = 0.0;
        for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[wrap(y + i) * n + x];
        field[y * n + x] = acc;
      }
    // Scale by the field's theoretical std, (sum k^2) for a separable kernel,
    // so images keep their natural per-sample contrast variation.
    double field_std = 0.0;
    for (double v : k) field_std += v * v;
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double v = cfg.mean + cfg.stddev * field[y * n + x] / field_std;
        out.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
  }
  return out;
}

inline std::vector<Image> toy_dataset(int count, const ToyDataConfig& cfg, std::uint64_t seed) {
  std::vector<Image> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    SeededRng rng(derive_seed(seed, static_cast<std::uint64_t>(i)));
    out.push_back(gaussian_texture(cfg, rng));
  }
  return out;
}

}  // namespace tdbfr
