#include <gtest/gtest.h>

#include "tdbfr/filters.hpp"
#include "tdbfr/rng.hpp"

using namespace tdbfr;

namespace {

Image random_image(int w, int h, std::uint64_t seed, int channels = 1) {
  SeededRng rng(seed);
  return rng.normal_image(w, h, channels);
}

double variance(const Image& img) {
  const double m = mean(img);
  double s = 0.0;
  for (double v : img.pixels()) s += (v - m) * (v - m);
  return s / static_cast<double>(img.size());
}

}  // namespace

TEST(Lowpass, IdentityAndConstant) {
  const Image a = random_image(16, 16, 1);
  EXPECT_EQ(lowpass(a, {1}), a);
  const Image c(16, 16, 3, ValueRange::model, 0.37);
  for (int n : {2, 4, 8}) {
    EXPECT_LE(max_abs_diff(lowpass(c, {n}), c), 1e-12);
    EXPECT_LE(max_abs_diff(lowpass(c, {n}, FilterKernel::area_bicubic), c), 1e-12);
  }
}

TEST(Lowpass, Linearity) {
  for (int trial = 0; trial < 100; ++trial) {
    const Image a = random_image(16, 8, 100 + trial);
    const Image b = random_image(16, 8, 500 + trial);
    const double alpha = 0.5 + trial * 0.01, beta = -1.5;
    for (int n : {2, 4}) {
      const Image lhs = lowpass(linear_combination(alpha, a, beta, b), {n});
      const Image rhs = linear_combination(alpha, lowpass(a, {n}), beta, lowpass(b, {n}));
      EXPECT_LE(max_abs_diff(lhs, rhs), 1e-6);
    }
    const Image lhs = resize(a + b, 24, 5);
    EXPECT_LE(max_abs_diff(lhs, resize(a, 24, 5) + resize(b, 24, 5)), 1e-6);
  }
}

TEST(Lowpass, RejectsNonDivisible) {
  EXPECT_THROW(lowpass(Image(10, 8), {4}), std::invalid_argument);
  EXPECT_THROW(lowpass(Image(8, 8), {0}), std::invalid_argument);
}

TEST(Highpass, Examples) {
  const Image a = random_image(16, 16, 2);
  const Image h1 = highpass_residual(a, {1});
  for (double v : h1.pixels()) EXPECT_EQ(v, 0.0);
  const Image c(16, 16, 1, ValueRange::model, -0.2);
  EXPECT_LE(max_abs_diff(highpass_residual(c, {4}), Image(16, 16)), 1e-12);
  const Image low = lowpass(a, {4});
  const Image high = highpass_residual(a, {4});
  EXPECT_LE(max_abs_diff(low + high, a), 1e-12);
}

TEST(FreqSwap, Examples) {
  const Image x = random_image(16, 16, 3);
  const Image y = random_image(16, 16, 4);
  EXPECT_LE(max_abs_diff(freq_swap(x, x, {4}), x), 1e-12);
  EXPECT_EQ(freq_swap(x, y, {1}), y);
  EXPECT_THROW(freq_swap(x, Image(8, 16), {2}), std::invalid_argument);
}

TEST(FreqSwap, Symmetry) {
  const Image x = random_image(32, 16, 5, 3);
  const Image y = random_image(32, 16, 6, 3);
  for (int n : {2, 4, 8}) {
    EXPECT_LE(max_abs_diff(freq_swap(x, y, {n}) + freq_swap(y, x, {n}), x + y), 1e-12);
  }
}

TEST(FreqSwap, LowBandOfSwapIsCloseToTarget) {
  // Area-then-bilinear is not an exact projection, so this holds only
  // approximately. The residual is measured relative to the signal.
  const Image x = random_image(32, 32, 7);
  const Image y = random_image(32, 32, 8);
  for (int n : {2, 4}) {
    const Image swapped_low = lowpass(freq_swap(x, y, {n}), {n});
    const Image target = lowpass(y, {n});
    const double residual = max_abs_diff(swapped_low, target);
    const double difference = max_abs_diff(lowpass(x, {n}), target);
    EXPECT_LT(residual, difference);
  }
}

TEST(Resize, Examples) {
  const Image a = random_image(8, 8, 9, 3);
  EXPECT_EQ(resize(a, 8, 8), a);
  const Image c(8, 8, 1, ValueRange::display, 0.6);
  EXPECT_LE(max_abs_diff(resize(c, 17, 3), Image(17, 3, 1, ValueRange::display, 0.6)), 1e-12);
  EXPECT_LE(max_abs_diff(resize(c, 64, 64), Image(64, 64, 1, ValueRange::display, 0.6)), 1e-12);
  const Image round_trip = resize(resize(a, 16, 16), 8, 8);
  EXPECT_NEAR(mean(round_trip), mean(a), 1e-6);
  EXPECT_THROW(resize(a, 0, 8), std::invalid_argument);
}

TEST(Resize, PreservesMetadata) {
  Image a = random_image(8, 8, 10, 3);
  a.set_range(ValueRange::display);
  const Image up = resize(a, 16, 16);
  EXPECT_EQ(up.channels(), 3);
  EXPECT_EQ(up.range(), ValueRange::display);
  EXPECT_EQ(lowpass(a, {2}).range(), ValueRange::display);
  EXPECT_EQ(freq_swap(a, a, {2}).range(), ValueRange::display);
}

TEST(AreaDownsample, VarianceDoesNotIncrease) {
  for (int trial = 0; trial < 20; ++trial) {
    const Image a = random_image(32, 32, 200 + trial);
    for (int n : {2, 4, 8}) EXPECT_LE(variance(area_downsample(a, {n})), variance(a) + 1e-12);
  }
}

TEST(AreaDownsample, BlockMeans) {
  Image a(4, 2);
  for (int i = 0; i < 8; ++i) a[i] = i;
  const Image d = area_downsample(a, {2});
  ASSERT_EQ(d.width(), 2);
  ASSERT_EQ(d.height(), 1);
  EXPECT_DOUBLE_EQ(d[0], (0 + 1 + 4 + 5) / 4.0);
  EXPECT_DOUBLE_EQ(d[1], (2 + 3 + 6 + 7) / 4.0);
}
