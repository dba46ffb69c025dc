#include <gtest/gtest.h>

#include <cmath>

#include "tdbfr/desk.hpp"
#include "tdbfr/metrics.hpp"
#include "tdbfr/toy_data.hpp"

using namespace tdbfr;

namespace {

Image random_image(int w, int h, std::uint64_t seed, double scale = 1.0) {
  SeededRng rng(seed);
  return scale * rng.normal_image(w, h);
}

// Desk models trained once for every test in this file.
struct DeskModels {
  PipelineConfig cfg = desk_pipeline_config();
  DegradationConfig degradation = desk_preset();
  std::vector<Image> test_clean;
  DenoiserSet models;

  DeskModels() {
    const auto train = toy_dataset(200, {}, 1);
    test_clean = toy_dataset(50, {}, 999);
    models = to_denoiser_set(
        train_pipeline_models(train, cfg, degradation, desk_training_config(), 5));
  }

  Image degraded(int i) const {
    SeededRng rng(derive_seed(77, static_cast<std::uint64_t>(i)));
    return synthesize(test_clean[static_cast<std::size_t>(i)], degradation, rng).y;
  }
};

const DeskModels& desk() {
  static const DeskModels instance;
  return instance;
}

StageConfig lrs_config(int resolution, TimeWindow w, int n) {
  StageConfig s;
  s.kind = StageKind::lrs;
  s.resolution = resolution;
  s.window = w;
  s.filter = {n};
  s.denoiser_id = "a";
  return s;
}

}  // namespace

TEST(LAdr, Examples) {
  const Image y = random_image(16, 16, 1);
  EXPECT_EQ(compute_l_adr(y, y, {2}), 0.0);
  const Image zero(16, 16);
  const Image half(16, 16, 1, ValueRange::model, 0.5);
  for (int n : {1, 2, 4, 8}) EXPECT_NEAR(compute_l_adr(half, zero, {n}), 0.25, 1e-15);
  // x_end = y + c gives c^2 for every factor
  for (int n : {1, 2, 4}) EXPECT_NEAR(compute_l_adr(add_scalar(y, 0.3), y, {n}), 0.09, 1e-12);
}

TEST(LAdr, MatchesNaiveLoop) {
  const Image x = random_image(16, 16, 2);
  const Image y = random_image(16, 16, 3);
  // Naive: area average over 2x2 blocks, bilinear (half-pixel centres) back up.
  auto low = [](const Image& img) {
    const int n = 8;
    std::vector<double> d(n * n);
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        d[j * n + i] = (img.at(0, 2 * j, 2 * i) + img.at(0, 2 * j, 2 * i + 1) +
                        img.at(0, 2 * j + 1, 2 * i) + img.at(0, 2 * j + 1, 2 * i + 1)) / 4;
    Image out(16, 16);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const double sy = std::clamp((y + 0.5) / 2 - 0.5, 0.0, n - 1.0);
        const double sx = std::clamp((x + 0.5) / 2 - 0.5, 0.0, n - 1.0);
        const int y0 = static_cast<int>(sy), x0 = static_cast<int>(sx);
        const int y1 = std::min(y0 + 1, n - 1), x1 = std::min(x0 + 1, n - 1);
        const double fy = sy - y0, fx = sx - x0;
        out.at(0, y, x) = (1 - fy) * ((1 - fx) * d[y0 * n + x0] + fx * d[y0 * n + x1]) +
                          fy * ((1 - fx) * d[y1 * n + x0] + fx * d[y1 * n + x1]);
      }
    return out;
  };
  const Image lx = low(x), ly = low(y);
  double s = 0;
  for (int j = 0; j < 16; ++j)
    for (int i = 0; i < 16; ++i) s += std::pow(ly.at(0, j, i) - lx.at(0, j, i), 2);
  EXPECT_NEAR(compute_l_adr(x, y, {2}), s / 256.0, 1e-12);
}

TEST(Lrs, FactorOneReturnsForwardedInput) {
  // With N = 1 the swap replaces x entirely, so the denoiser cannot matter.
  const auto s = make_linear_schedule(200, 1e-4, 0.02);
  const Image y = random_image(16, 16, 4, 0.4);
  const StageConfig cfg = lrs_config(16, {40, 20}, 1);
  const ZeroDenoiser zero;
  const AnalyticGaussianDenoiser analytic(Image(16, 16), 0.16, s);
  SeededRng r1(5), r2(5);
  const LrsResult a = lrs_stage(y, cfg, zero, s, r1);
  const LrsResult b = lrs_stage(y, cfg, analytic, s, r2);
  EXPECT_EQ(a.x_end, b.x_end);
  EXPECT_EQ(a.evaluations, 20);
  // and x_end is a forward sample of y at t_end: standardized residual ~ N(0, 1)
  const double ab = s.alpha_bar(20);
  double m = 0, v = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double e = (a.x_end[i] - std::sqrt(ab) * y[i]) / std::sqrt(1 - ab);
    m += e / y.size();
    v += e * e / y.size();
  }
  EXPECT_NEAR(m, 0.0, 5.0 / 16.0);
  EXPECT_NEAR(v, 1.0, 0.3);
}

TEST(Lrs, ConditioningBeatsUnconditionedSampling) {
  const auto s = make_linear_schedule(200, 1e-4, 0.02);
  const double sigma2 = 0.16;
  const AnalyticGaussianDenoiser den(Image(16, 16), sigma2, s);
  const StageConfig cfg = lrs_config(16, {50, 10}, 2);
  double wins = 0;
  for (int i = 0; i < 20; ++i) {
    const Image y = random_image(16, 16, 100 + i, std::sqrt(sigma2));
    SeededRng rng(200 + i);
    const LrsResult r = lrs_stage(y, cfg, den, s, rng);
    Image free = rng.normal_image(16, 16);
    for (int t = 200; t > 10; --t) free = reverse_step(free, t, den, nullptr, s, rng);
    wins += psnr(r.x_end, y, 2.0) >= psnr(free, y, 2.0);
  }
  EXPECT_EQ(wins, 20);
}

TEST(Lrs, RejectsBadInputs) {
  const auto s = make_linear_schedule(200, 1e-4, 0.02);
  const ZeroDenoiser zero;
  SeededRng rng(1);
  EXPECT_THROW(lrs_stage(Image(8, 8), lrs_config(16, {20, 10}, 2), zero, s, rng),
               std::invalid_argument);
  EXPECT_THROW(lrs_stage(Image(16, 16), lrs_config(16, {10, 10}, 2), zero, s, rng),
               std::invalid_argument);
  EXPECT_THROW(lrs_stage(Image(16, 16), lrs_config(16, {300, 10}, 2), zero, s, rng),
               std::invalid_argument);
}

TEST(Adr, ThresholdSemantics) {
  const auto s = make_linear_schedule(200, 1e-4, 0.02);
  const AnalyticGaussianDenoiser den(Image(16, 16), 0.16, s);
  const Image y = random_image(16, 16, 6, 0.4);
  StageConfig cfg;
  cfg.kind = StageKind::adr;
  cfg.resolution = 16;
  cfg.window = {30, 10};
  cfg.candidates = {{8}, {4}, {2}, {1}};
  cfg.denoiser_id = "a";

  cfg.threshold = 1e9;
  const AdrResult loose = adr_stage(y, y, cfg, den, s, 7);
  EXPECT_FALSE(loose.exhausted);
  EXPECT_EQ(loose.chosen.n, 8);
  ASSERT_EQ(loose.attempts.size(), 1u);
  EXPECT_EQ(loose.evaluations, 20);

  cfg.threshold = 1e-300;
  const AdrResult tight = adr_stage(y, y, cfg, den, s, 7);
  EXPECT_TRUE(tight.exhausted);
  ASSERT_EQ(tight.attempts.size(), 4u);
  EXPECT_EQ(tight.evaluations, 80);
  auto best = tight.attempts.front();
  for (const auto& a : tight.attempts)
    if (a.l_adr < best.l_adr) best = a;
  EXPECT_EQ(tight.chosen.n, best.n);
  EXPECT_EQ(compute_l_adr(tight.x_end, y, tight.chosen), best.l_adr);
  // attempt i uses its own sub-stream, so the first attempt is shared
  EXPECT_EQ(tight.attempts.front(), loose.attempts.front());

  // accept the second candidate exactly at its L_adr
  cfg.threshold = tight.attempts[1].l_adr;
  if (tight.attempts[0].l_adr > cfg.threshold) {
    const AdrResult mid = adr_stage(y, y, cfg, den, s, 7);
    EXPECT_FALSE(mid.exhausted);
    EXPECT_EQ(mid.chosen.n, 4);
    EXPECT_LE(compute_l_adr(mid.x_end, y, mid.chosen), cfg.threshold);
  }
}

TEST(Adr, RejectsBadConfig) {
  const auto s = make_linear_schedule(200, 1e-4, 0.02);
  const ZeroDenoiser zero;
  StageConfig cfg;
  cfg.kind = StageKind::adr;
  cfg.resolution = 16;
  cfg.window = {30, 10};
  cfg.denoiser_id = "a";
  EXPECT_THROW(adr_stage(Image(16, 16), Image(16, 16), cfg, zero, s, 1), std::invalid_argument);
  cfg.candidates = {{2}};
  EXPECT_THROW(adr_stage(Image(32, 32), Image(32, 32), cfg, zero, s, 1), std::invalid_argument);
}

TEST(Gdb, ZeroPredictionChain) {
  const auto s = make_linear_schedule(200, 3.3e-6, 6.6e-4);
  const ZeroDenoiser zero(true);
  StageConfig cfg;
  cfg.kind = StageKind::gdb;
  cfg.resolution = 8;
  cfg.window = {12, 0};
  cfg.denoiser_id = "g";
  const Image x_in = random_image(8, 8, 8, 0.5);
  SamplerOptions opt;
  opt.sigma_mode = SigmaMode::zero;
  SeededRng rng(9), replay(9);
  const GdbResult r = gdb_stage(x_in, x_in, cfg, zero, s, rng, opt);
  EXPECT_EQ(r.evaluations, 12);
  // eps_hat = 0: x_{t-1} = x_t / sqrt(alpha_t), so x_0 = z_begin / prod sqrt(alpha_t)
  const Image z = forward_sample(x_in, 12, replay.normal_like(x_in), s);
  double prod = 1.0;
  for (int t = 1; t <= 12; ++t) prod *= 1.0 - s.beta(t);
  for (std::size_t i = 0; i < z.size(); ++i) EXPECT_NEAR(r.x0[i], z[i] / std::sqrt(prod), 1e-12);
}

TEST(Gdb, RejectsUnconditionalDenoiser) {
  const auto s = make_linear_schedule(200, 3.3e-6, 6.6e-4);
  StageConfig cfg;
  cfg.kind = StageKind::gdb;
  cfg.resolution = 8;
  cfg.window = {12, 0};
  SeededRng rng(1);
  EXPECT_THROW(gdb_stage(Image(8, 8), Image(8, 8), cfg, ZeroDenoiser(false), s, rng),
               std::invalid_argument);
  cfg.window = {12, 1};
  EXPECT_THROW(gdb_stage(Image(8, 8), Image(8, 8), cfg, ZeroDenoiser(true), s, rng),
               std::invalid_argument);
}

TEST(Gdb, TrainedDetailBoostKeepsFidelity) {
  const DeskModels& d = desk();
  const auto& st = d.cfg.stages;
  std::vector<VarianceSchedule> sc;
  for (const auto& s : st) sc.push_back(make_schedule(d.cfg.schedule_for(s.resolution)));
  double before = 0, after = 0;
  for (int i = 0; i < 50; ++i) {
    const Image y = to_model_range(d.degraded(i));
    const Image truth = to_model_range(d.test_clean[static_cast<std::size_t>(i)]);
    SeededRng rng(static_cast<std::uint64_t>(i));
    Image current = lrs_stage(resize(y, 16, 16), st[0], *d.models.at("lrs"), sc[0], rng).x0_estimate;
    for (int k = 1; k <= 2; ++k) {
      current = adr_stage(resize(y, 32, 32), resize(current, 32, 32), st[k], *d.models.at("adr"),
                          sc[k], 100 + i)
                    .x0_estimate;
    }
    const Image x_in = resize(current, 64, 64);
    const GdbResult g = gdb_stage(x_in, x_in, st[3], *d.models.at("gdb"), sc[3], rng);
    before += evaluate_pair(x_in, truth).psnr_db / 50;
    after += evaluate_pair(g.x0, truth).psnr_db / 50;
  }
  EXPECT_GE(after, before - 0.5);
}

TEST(Restore, DeterministicWithConsistentTrace) {
  const DeskModels& d = desk();
  const Image y = d.degraded(0);
  const RestoreResult a = restore(y, d.models, d.cfg, 42);
  const RestoreResult b = restore(y, d.models, d.cfg, 42);
  EXPECT_EQ(a.restored, b.restored);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(a.trace.to_text(), b.trace.to_text());
  EXPECT_EQ(a.restored.width(), 64);
  EXPECT_EQ(a.restored.range(), ValueRange::display);

  int total = 0, expected = 0;
  ASSERT_EQ(a.trace.stages.size(), d.cfg.stages.size());
  for (std::size_t i = 0; i < a.trace.stages.size(); ++i) {
    const StageTrace& s = a.trace.stages[i];
    total += s.evaluations;
    const int attempts = s.kind == StageKind::adr ? static_cast<int>(s.attempts.size()) : 1;
    expected += d.cfg.stages[i].window.length() * attempts;
    if (s.kind == StageKind::adr && !s.exhausted) {
      EXPECT_LE(s.attempts.back().l_adr, s.threshold);
      EXPECT_EQ(s.attempts.back().n, s.chosen_n);
    }
  }
  EXPECT_EQ(a.trace.total_evaluations, total);
  EXPECT_EQ(total, expected);
  ASSERT_EQ(a.trace.stitches.size(), 3u);
  for (const auto& st : a.trace.stitches) {
    EXPECT_TRUE(std::isfinite(st.gap_db));
    EXPECT_EQ(st.to_stage, st.from_stage + 1);
  }
  EXPECT_NE(restore(y, d.models, d.cfg, 43).restored, a.restored);
}

TEST(Restore, CleanInputStaysClose) {
  const DeskModels& d = desk();
  double mean_psnr = 0;
  for (int i = 0; i < 10; ++i) {
    const Image& x = d.test_clean[static_cast<std::size_t>(i)];
    mean_psnr += evaluate_pair(restore(x, d.models, d.cfg, i).restored, x).psnr_db / 10;
  }
  EXPECT_GE(mean_psnr, 20.0);
}

TEST(Restore, ImprovesDegradedInputs) {
  const DeskModels& d = desk();
  MetricReport restored, degraded;
  for (int i = 0; i < 20; ++i) {
    const Image y = d.degraded(i);
    const Image& x = d.test_clean[static_cast<std::size_t>(i)];
    restored.add(evaluate_pair(restore(y, d.models, d.cfg, 100 + i).restored, x));
    degraded.add(evaluate_pair(resize(y, 64, 64), x));
  }
  restored.finalize();
  degraded.finalize();
  EXPECT_GT(restored.mean.psnr_db, degraded.mean.psnr_db);
  EXPECT_GT(restored.mean.ssim, degraded.mean.ssim);
}

TEST(Restore, SwapImprovesLowBandFidelity) {
  const DeskModels& d = desk();
  PipelineConfig no_swap = d.cfg;
  no_swap.sampler.swap = false;
  // Compare the LRS stage output against its conditioning image.
  const StageConfig& lrs = d.cfg.stages[0];
  const VarianceSchedule s = make_schedule(d.cfg.schedule_for(16));
  int wins = 0;
  for (int i = 0; i < 50; ++i) {
    const Image y = resize(to_model_range(d.degraded(i)), 16, 16);
    SeededRng r1(i), r2(i);
    const LrsResult with = lrs_stage(y, lrs, *d.models.at("lrs"), s, r1, d.cfg.sampler);
    const LrsResult without = lrs_stage(y, lrs, *d.models.at("lrs"), s, r2, no_swap.sampler);
    wins += compute_l_adr(with.x_end, y, lrs.filter) < compute_l_adr(without.x_end, y, lrs.filter);
  }
  EXPECT_GE(wins, 45);
}

TEST(Restore, StageErrorsNameTheStage) {
  const DeskModels& d = desk();
  DenoiserSet missing = d.models;
  missing.erase("gdb");
  try {
    restore(d.degraded(0), missing, d.cfg, 1);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), 3);
    EXPECT_NE(std::string(e.what()).find("gdb"), std::string::npos);
  }
  PipelineConfig bad = d.cfg;
  std::swap(bad.stages[0], bad.stages[1]);
  EXPECT_THROW(restore(d.degraded(0), d.models, bad, 1), std::invalid_argument);
}

TEST(StepBudget, DeskAndSingleStage) {
  const StepBudget b = step_budget(desk_pipeline_config());
  EXPECT_EQ(b.truncated_evals, 10 + 20 + 20 + 12);
  EXPECT_EQ(b.full_baseline_evals, 200);
  EXPECT_NEAR(b.ratio, 3.2258064516129032258, 1e-15);
  EXPECT_NEAR(b.ratio, 1000.0 / 310.0, 1e-15);
  EXPECT_GE(b.ratio, 3.0);

  PipelineConfig single;
  single.schedules[64] = {ScheduleKind::linear, 200, 1e-4, 0.02};
  StageConfig g;
  g.kind = StageKind::gdb;
  g.resolution = 64;
  g.window = {200, 0};
  single.stages = {g};
  EXPECT_DOUBLE_EQ(step_budget(single).ratio, 1.0);
}

TEST(PipelineConfig, Validation) {
  PipelineConfig cfg = desk_pipeline_config();
  EXPECT_NO_THROW(cfg.validate());
  PipelineConfig c1 = cfg;
  c1.stages[1].candidates = {{2}, {4}};
  EXPECT_THROW(c1.validate(), std::invalid_argument);
  PipelineConfig c2 = cfg;
  c2.stages[1].threshold = 0.0;
  EXPECT_THROW(c2.validate(), std::invalid_argument);
  PipelineConfig c3 = cfg;
  c3.stages[2].resolution = 16;
  EXPECT_THROW(c3.validate(), std::invalid_argument);
  PipelineConfig c4 = cfg;
  c4.stages[3].window = {12, 2};
  EXPECT_THROW(c4.validate(), std::invalid_argument);
  PipelineConfig c5 = cfg;
  c5.stages.erase(c5.stages.begin() + 1, c5.stages.begin() + 3);
  EXPECT_THROW(c5.validate(), std::invalid_argument);
  EXPECT_EQ(handoff_from_string("noisy_sample"), Handoff::noisy_sample);
  EXPECT_THROW(handoff_from_string("x"), std::invalid_argument);
}

TEST(Trace, TextLayout) {
  const DeskModels& d = desk();
  const std::string text = restore(d.degraded(1), d.models, d.cfg, 5).trace.to_text();
  for (const char* needle : {"[run]", "[stage 0]", "[stage 3]", "[stitch 2->3]",
                             "kind = adr", "attempt = ", "total_evaluations = "}) {
    EXPECT_NE(text.find(needle), std::string::npos) << needle;
  }
}
