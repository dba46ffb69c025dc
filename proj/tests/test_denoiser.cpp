#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "tdbfr/denoiser.hpp"
#include "tdbfr/patch_denoiser.hpp"

using namespace tdbfr;

namespace {

Image gaussian_image(int w, int h, double mu, double sigma, SeededRng& rng) {
  Image img(w, h);
  for (double& v : img.pixels()) v = mu + sigma * rng.normal();
  return img;
}

std::vector<TrainingPair> gaussian_pairs(int count, int size, double sigma, std::uint64_t seed) {
  SeededRng rng(seed);
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < count; ++i) {
    Image clean = gaussian_image(size, size, 0.0, sigma, rng);
    pairs.push_back({clean, clean});
  }
  return pairs;
}

double mse_like(const Image& a, const Image& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST(Analytic, ZeroAtForwardMode) {
  const auto s = make_linear_schedule(200, 5e-4, 0.1);
  SeededRng rng(1);
  const Image mu = gaussian_image(4, 4, 0.1, 0.3, rng);
  const AnalyticGaussianDenoiser den(mu, 0.25, s);
  for (int t : {1, 50, 200}) {
    const Image eps = den.predict_eps(std::sqrt(s.alpha_bar(t)) * mu, t, nullptr);
    for (double v : eps.pixels()) EXPECT_NEAR(v, 0.0, 1e-12);
  }
}

TEST(Analytic, PointMass) {
  const auto s = make_linear_schedule(200, 5e-4, 0.1);
  SeededRng rng(2);
  const Image mu = gaussian_image(4, 4, 0.0, 1.0, rng);
  const Image x = gaussian_image(4, 4, 0.0, 1.0, rng);
  const AnalyticGaussianDenoiser den(mu, 0.0, s);
  const int t = 77;
  const double ab = s.alpha_bar(t);
  const Image eps = den.predict_eps(x, t, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(eps[i], (x[i] - std::sqrt(ab) * mu[i]) / std::sqrt(1.0 - ab), 1e-12);
  }
}

TEST(Analytic, ScalarCase) {
  // abar_1 = 0.5 for a one-off schedule with beta_1 = 0.5
  const auto s = make_linear_schedule(2, 0.5, 0.5);
  const AnalyticGaussianDenoiser den(Image(1, 1), 1.0, s);
  const Image x(1, 1, 1, ValueRange::model, 1.0);
  EXPECT_NEAR(den.posterior_mean(x, 1)[0], 0.7071067811865475244, 1e-15);
  EXPECT_NEAR(den.predict_eps(x, 1, nullptr)[0], 0.7071067811865475244, 1e-15);
  EXPECT_THROW(den.predict_eps(x, 3, nullptr), std::out_of_range);
  EXPECT_THROW(AnalyticGaussianDenoiser(Image(1, 1), -1.0, s), std::invalid_argument);
}

TEST(Analytic, BeatsOtherDenoisers) {
  const auto s = make_linear_schedule(200, 5e-4, 0.1);
  const double sigma = 0.5;
  const AnalyticGaussianDenoiser analytic(Image(8, 8, 1, ValueRange::model, 0.2), sigma * sigma, s);
  const AnalyticGaussianDenoiser wrong(Image(8, 8, 1, ValueRange::model, 0.0), 1.0, s);
  const ZeroDenoiser zero;
  SeededRng rng(3);
  for (int t : {5, 60, 180}) {
    std::vector<double> diffs_zero, diffs_wrong;
    for (int i = 0; i < 400; ++i) {
      const Image x0 = gaussian_image(8, 8, 0.2, sigma, rng);
      const Image eps = rng.normal_like(x0);
      const Image xt = forward_sample(x0, t, eps, s);
      const double ea = mse_like(eps, analytic.predict_eps(xt, t, nullptr));
      diffs_zero.push_back(mse_like(eps, zero.predict_eps(xt, t, nullptr)) - ea);
      diffs_wrong.push_back(mse_like(eps, wrong.predict_eps(xt, t, nullptr)) - ea);
    }
    for (const auto* d : {&diffs_zero, &diffs_wrong}) {
      double m = 0, v = 0;
      for (double e : *d) m += e / d->size();
      for (double e : *d) v += (e - m) * (e - m) / (d->size() - 1);
      EXPECT_GE(m, -3.0 * std::sqrt(v / d->size())) << t;
    }
  }
}

TEST(ReverseStep, ZeroPredictionNoNoise) {
  const auto s = make_linear_schedule(200, 5e-4, 0.1);
  SeededRng rng(4);
  const Image x = gaussian_image(4, 4, 0.0, 1.0, rng);
  const ZeroDenoiser zero;
  const Image out = reverse_step(x, 90, zero, nullptr, s, rng, SigmaMode::zero);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(out[i], x[i] / std::sqrt(s.alpha(90)), 1e-15);
  }
}

TEST(ReverseStep, FinalStepDeterministic) {
  const auto s = make_linear_schedule(200, 5e-4, 0.1);
  SeededRng a(5), b(6), src(7);
  const Image x = gaussian_image(4, 4, 0.0, 1.0, src);
  const AnalyticGaussianDenoiser den(Image(4, 4), 0.3, s);
  EXPECT_EQ(reverse_step(x, 1, den, nullptr, s, a), reverse_step(x, 1, den, nullptr, s, b));
  EXPECT_THROW(reverse_step(x, 0, den, nullptr, s, a), std::out_of_range);
  EXPECT_THROW(reverse_step(x, 201, den, nullptr, s, a), std::out_of_range);
}

TEST(ReverseStep, ScalarMonteCarlo) {
  const auto s = make_linear_schedule(200, 5e-4, 0.1);
  const double mu = 0.2, s2 = 0.25, xt = 0.6;
  const int t = 40;
  const AnalyticGaussianDenoiser den(Image(1, 1, 1, ValueRange::model, mu), s2, s);
  // closed form, written out independently of the library
  const double ab = s.alpha_bar(t), a = 1.0 - s.beta(t);
  const double e0 = (std::sqrt(ab) * s2 * xt + (1 - ab) * mu) / (ab * s2 + 1 - ab);
  const double eps = (xt - std::sqrt(ab) * e0) / std::sqrt(1 - ab);
  const double mean = (xt - (1 - a) / std::sqrt(1 - ab) * eps) / std::sqrt(a);
  const double var = s.beta(t);
  SeededRng rng(8);
  const int n = 100000;
  double sum = 0, sum_sq = 0;
  const Image x(1, 1, 1, ValueRange::model, xt);
  for (int i = 0; i < n; ++i) {
    const double v = reverse_step(x, t, den, nullptr, s, rng)[0];
    sum += v;
    sum_sq += v * v;
  }
  const double m = sum / n;
  const double v = sum_sq / n - m * m;
  EXPECT_NEAR(m, mean, 3.0 * std::sqrt(var / n));
  // standard error of a sample variance is var * sqrt(2 / n)
  EXPECT_NEAR(v, var, 3.0 * var * std::sqrt(2.0 / n));
}

TEST(ReverseStep, SigmaModes) {
  const auto s = make_linear_schedule(200, 5e-4, 0.1);
  EXPECT_DOUBLE_EQ(reverse_sigma(s, 50, SigmaMode::fixed_beta), std::sqrt(s.beta(50)));
  EXPECT_DOUBLE_EQ(reverse_sigma(s, 50, SigmaMode::posterior),
                   std::sqrt((1 - s.alpha_bar(49)) / (1 - s.alpha_bar(50)) * s.beta(50)));
  EXPECT_EQ(reverse_sigma(s, 1, SigmaMode::fixed_beta), 0.0);
  EXPECT_EQ(sigma_mode_from_string(to_string(SigmaMode::posterior)), SigmaMode::posterior);
}

TEST(ReverseStep, ShortChainRecoversScalarGaussian) {
  const auto s = make_linear_schedule(200, 5e-4, 0.1);
  const double mu = 0.2, s2 = 0.25;
  const AnalyticGaussianDenoiser den(Image(1, 1, 1, ValueRange::model, mu), s2, s);
  SeededRng rng(9);
  const int n = 3000;
  double sum = 0, sum_sq = 0;
  for (int i = 0; i < n; ++i) {
    Image x = rng.normal_image(1, 1);
    for (int t = 200; t >= 1; --t) x = reverse_step(x, t, den, nullptr, s, rng);
    sum += x[0];
    sum_sq += x[0] * x[0];
  }
  const double m = sum / n, v = sum_sq / n - m * m;
  EXPECT_NEAR(m, mu, 5.0 * std::sqrt(s2 / n));
  EXPECT_NEAR(v, s2, 0.1 * s2);
}

TEST(PatchModel, ZeroWeightsPredictZero) {
  PatchDenoiserModel m(10, "h", 1, 1, true, 0.0, PatchDenoiserModel::uniform_edges(10, 2));
  SeededRng rng(10);
  const Image x = gaussian_image(5, 5, 0, 1, rng);
  const Image eps = m.predict_eps(x, 3, &x);
  for (double v : eps.pixels()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(m.predict_eps(x, 3, nullptr), std::invalid_argument);
  EXPECT_THROW(m.predict_eps(x, 11, &x), std::out_of_range);
}

TEST(PatchModel, ScalarAffineAtRadiusZero) {
  PatchDenoiserModel m(10, "h", 0, 1, false, 0.0, {1, 6, 11});
  m.weights(0, 0)[0] = 0.5;
  m.weights(0, 0)[1] = -0.1;
  m.weights(1, 0)[0] = 2.0;
  SeededRng rng(11);
  const Image x = gaussian_image(6, 3, 0, 1, rng);
  const Image lo = m.predict_eps(x, 5, nullptr);
  const Image hi = m.predict_eps(x, 6, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_DOUBLE_EQ(lo[i], 0.5 * x[i] - 0.1);
    EXPECT_DOUBLE_EQ(hi[i], 2.0 * x[i]);
  }
}

TEST(PatchModel, BucketEdgesCoverRange) {
  const auto edges = PatchDenoiserModel::uniform_edges(200, 16);
  EXPECT_EQ(edges.front(), 1);
  EXPECT_EQ(edges.back(), 201);
  PatchDenoiserModel m(200, "h", 1, 1, true, 0.0, edges);
  int previous = 0;
  for (int t = 1; t <= 200; ++t) {
    const int b = m.bucket_of(t);
    EXPECT_TRUE(b == previous || b == previous + 1);
    EXPECT_GE(t, edges[b]);
    EXPECT_LT(t, edges[b + 1]);
    previous = b;
  }
  EXPECT_EQ(previous, 15);
  EXPECT_THROW(PatchDenoiserModel(10, "h", 1, 1, true, 0.0, {1, 5, 10}), std::invalid_argument);
}

TEST(PatchFit, ConstantDataBeatsBaseline) {
  const auto s = make_linear_schedule(100, 1e-3, 0.1);
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < 4; ++i) {
    const Image c(8, 8, 1, ValueRange::model, 0.3);
    pairs.push_back({c, c});
  }
  PatchFitConfig cfg;
  cfg.buckets = 4;
  cfg.samples_per_bucket = 4000;
  const PatchDenoiserModel m = fit_patch_denoiser(pairs, s, cfg, 1);
  for (const BucketLoss& l : m.losses()) {
    EXPECT_LT(l.loss, l.baseline);
    EXPECT_NEAR(l.baseline, 1.0, 0.1);  // E eps^2 = 1
  }
}

TEST(PatchFit, RidgeShrinksTowardBaseline) {
  const auto s = make_linear_schedule(100, 1e-3, 0.1);
  const auto pairs = gaussian_pairs(8, 8, 0.5, 2);
  PatchFitConfig cfg;
  cfg.buckets = 2;
  cfg.samples_per_bucket = 3000;
  double previous_loss = 0.0;
  for (double lambda : {1e-3, 1e-1, 1.0, 10.0, 1e3, 1e6}) {
    cfg.ridge_lambda = lambda;
    const PatchDenoiserModel m = fit_patch_denoiser(pairs, s, cfg, 3);
    const BucketLoss l = m.losses()[0];
    EXPECT_GE(l.loss, previous_loss - 1e-12);
    previous_loss = l.loss;
    if (lambda == 1e6) {
      EXPECT_NEAR(l.loss, l.baseline, 1e-3);
      for (double w : m.weights(0, 0)) EXPECT_LT(std::abs(w), 1e-3);
    }
  }
}

TEST(PatchFit, SingularWithoutRidge) {
  const auto s = make_linear_schedule(100, 1e-3, 0.1);
  // conditional on a constant image: the condition features duplicate the bias
  std::vector<TrainingPair> pairs;
  SeededRng rng(4);
  for (int i = 0; i < 4; ++i) {
    pairs.push_back({gaussian_image(8, 8, 0, 0.5, rng), Image(8, 8, 1, ValueRange::model, 0.1)});
  }
  PatchFitConfig cfg;
  cfg.buckets = 2;
  cfg.samples_per_bucket = 2000;
  cfg.ridge_lambda = 0.0;
  EXPECT_THROW(fit_patch_denoiser(pairs, s, cfg, 1), std::runtime_error);
  EXPECT_THROW(fit_patch_denoiser({}, s, cfg, 1), std::invalid_argument);
}

TEST(PatchFit, GaussianCoefficientMatchesRegressionOracle) {
  const auto s = make_linear_schedule(200, 5e-4, 0.1);
  const double sigma = 0.5;
  const auto pairs = gaussian_pairs(64, 16, sigma, 5);
  PatchFitConfig cfg;
  cfg.radius = 0;
  cfg.conditional = false;
  cfg.buckets = 16;
  cfg.ridge_lambda = 0.0;
  cfg.samples_per_bucket = 100000;
  const PatchDenoiserModel m = fit_patch_denoiser(pairs, s, cfg, 6);
  for (int b = 0; b < m.buckets(); ++b) {
    const int centre = (m.edges()[b] + m.edges()[b + 1] - 1) / 2;
    const double ab = s.alpha_bar(centre);
    const double oracle = std::sqrt(1.0 - ab) / (ab * sigma * sigma + 1.0 - ab);
    EXPECT_NEAR(m.weights(b, 0)[0], oracle, 0.05 * oracle) << "bucket " << b;
  }
}

TEST(PatchFit, PredictionMatchesNaiveMatmul) {
  const auto s = make_linear_schedule(50, 1e-3, 0.1);
  SeededRng rng(7);
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < 6; ++i) {
    Image c = rng.normal_image(6, 5, 3);
    pairs.push_back({c, 0.5 * c});
  }
  PatchFitConfig cfg;
  cfg.buckets = 3;
  cfg.samples_per_bucket = 3000;
  const PatchDenoiserModel m = fit_patch_denoiser(pairs, s, cfg, 8);
  const Image xt = forward_sample(pairs[0].clean, 20, rng.normal_like(pairs[0].clean), s);
  const Image out = m.predict_eps(xt, 20, &pairs[0].degraded);
  const int b = m.bucket_of(20);
  auto refl = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) {
        const auto w = m.weights(b, c);
        double acc = w[w.size() - 1];
        std::size_t k = 0;
        for (const Image* img : std::initializer_list<const Image*>{&xt, &pairs[0].degraded})
          for (int cc = 0; cc < 3; ++cc)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx)
                acc += w[k++] * img->at(cc, refl(y + dy, 5), refl(x + dx, 6));
        EXPECT_NEAR(out.at(c, y, x), acc, 1e-12);
      }
}

TEST(PatchFit, DeterministicAndHeldOut) {
  const auto s = make_linear_schedule(100, 1e-3, 0.1);
  const auto pairs = gaussian_pairs(8, 8, 0.5, 9);
  PatchFitConfig cfg;
  cfg.buckets = 2;
  cfg.samples_per_bucket = 2000;
  const PatchDenoiserModel a = fit_patch_denoiser(pairs, s, cfg, 10);
  const PatchDenoiserModel b = fit_patch_denoiser(pairs, s, cfg, 10);
  std::ostringstream sa, sb;
  a.save(sa);
  b.save(sb);
  EXPECT_EQ(sa.str(), sb.str());
  cfg.samples_per_bucket = 4000;
  const PatchDenoiserModel c = fit_patch_denoiser(pairs, s, cfg, 10);
  const auto held_small = evaluate_patch_denoiser(a, pairs, s, 20000, 64, 99);
  const auto held_large = evaluate_patch_denoiser(c, pairs, s, 20000, 64, 99);
  for (std::size_t i = 0; i < held_small.size(); ++i) {
    EXPECT_LT(held_small[i].loss, held_small[i].baseline);
    // 2 standard errors of a mean of squared errors (variance about 2 loss^2)
    EXPECT_LE(held_large[i].loss,
              held_small[i].loss + 2.0 * std::sqrt(2.0 / 20000) * held_small[i].loss);
  }
}

TEST(PatchModel, SaveLoadRoundTripAndCorruption) {
  const auto s = make_linear_schedule(100, 1e-3, 0.1);
  const auto pairs = gaussian_pairs(4, 8, 0.5, 11);
  PatchFitConfig cfg;
  cfg.buckets = 3;
  cfg.samples_per_bucket = 1000;
  const PatchDenoiserModel m = fit_patch_denoiser(pairs, s, cfg, 12);
  std::ostringstream os;
  m.save(os);
  std::istringstream is(os.str());
  const PatchDenoiserModel back = PatchDenoiserModel::load(is);
  std::ostringstream os2;
  back.save(os2);
  EXPECT_EQ(os.str(), os2.str());
  EXPECT_EQ(back.schedule_hash(), schedule_hash(s));

  std::string bad_version = os.str();
  bad_version.replace(bad_version.find("version 1"), 9, "version 7");
  std::istringstream iv(bad_version);
  EXPECT_THROW(PatchDenoiserModel::load(iv), std::runtime_error);

  std::istringstream truncated(os.str().substr(0, os.str().size() / 2));
  EXPECT_THROW(PatchDenoiserModel::load(truncated), std::runtime_error);

  std::istringstream garbage("hello world");
  EXPECT_THROW(PatchDenoiserModel::load(garbage), std::runtime_error);
}
