#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>

#include "tdbfr/image.hpp"

namespace tdbfr {

/// Deterministic generator with a platform-independent stream.
///
/// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
/// standard. Everything built on top (uniform doubles, normals, integers,
/// Poisson draws) is implemented here rather than through the <random>
/// distributions, whose algorithms are implementation-defined.
///
/// - uniform(): top 53 bits of one draw, scaled to [0, 1).
/// - normal(): Box-Muller; the second variate of each pair is cached.
/// - uniform_int(): rejection sampling on the raw 64-bit range.
/// - poisson(): Knuth multiplication for lambda < 30, otherwise Hormann's
///   PTRS transformed rejection.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed = 0) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (hi < lo) throw std::invalid_argument("uniform_int: empty range");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(engine_());  // full range
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t r;
    do {
      r = engine_();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    double u1;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double radius = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    cached_ = radius * std::sin(angle);
    has_cached_ = true;
    return radius * std::cos(angle);
  }

  std::int64_t poisson(double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("poisson: negative rate");
    if (lambda == 0.0) return 0;
    if (lambda < 30.0) {
      const double limit = std::exp(-lambda);
      std::int64_t k = 0;
      double prod = uniform();
      while (prod > limit) {
        ++k;
        prod *= uniform();
      }
      return k;
    }
    // PTRS (Hormann 1993).
    const double slam = std::sqrt(lambda);
    const double loglam = std::log(lambda);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double invalpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    while (true) {
      const double u = uniform() - 0.5;
      const double v = uniform();
      const double us = 0.5 - std::abs(u);
      const double k = std::floor((2.0 * a / us + b) * u + lambda + 0.43);
      if (us >= 0.07 && v <= vr) return static_cast<std::int64_t>(k);
      if (k < 0.0 || (us < 0.013 && v > us)) continue;
      if (std::log(v) + std::log(invalpha) - std::log(a / (us * us) + b) <=
          -lambda + k * loglam - std::lgamma(k + 1.0)) {
        return static_cast<std::int64_t>(k);
      }
    }
  }

  /// Image of i.i.d. standard normals with the given shape.
  Image normal_image(int width, int height, int channels = 1,
                     ValueRange range = ValueRange::model) {
    Image out(width, height, channels, range);
    for (double& v : out.pixels()) v = normal();
    return out;
  }

  Image normal_like(const Image& shape) {
    return normal_image(shape.width(), shape.height(), shape.channels(), shape.range());
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

/// Seed for the `index`-th independent job of a batch: `seed XOR index`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) noexcept {
  return seed ^ index;
}

/// Seed for a named sub-stream (stage, attempt, ...). Mixes with splitmix64 so
/// that neighbouring indices do not collide with derive_seed() outputs.
constexpr std::uint64_t substream_seed(std::uint64_t seed, std::uint64_t tag) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (tag + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace tdbfr
