#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdbfr/denoiser.hpp"
#include "tdbfr/filters.hpp"
#include "tdbfr/image.hpp"
#include "tdbfr/rng.hpp"
#include "tdbfr/schedule.hpp"

namespace tdbfr {

enum class StageKind { lrs, adr, gdb };

inline const char* to_string(StageKind k) {
  switch (k) {
    case StageKind::lrs: return "lrs";
    case StageKind::adr: return "adr";
    case StageKind::gdb: return "gdb";
  }
  return "?";
}

inline StageKind stage_kind_from_string(const std::string& s) {
  if (s == "lrs") return StageKind::lrs;
  if (s == "adr") return StageKind::adr;
  if (s == "gdb") return StageKind::gdb;
  throw std::invalid_argument("unknown stage kind '" + s + "'");
}

/// What a stage passes up the ladder: its final noisy sample x_{t_end}, or the
/// clean-image estimate the denoiser made on the last step (low band swapped
/// with y), which the next stage then re-noises to its own t_begin.
enum class Handoff { noisy_sample, denoised_estimate };

inline const char* to_string(Handoff h) {
  return h == Handoff::noisy_sample ? "noisy_sample" : "denoised_estimate";
}

inline Handoff handoff_from_string(const std::string& s) {
  if (s == "noisy_sample") return Handoff::noisy_sample;
  if (s == "denoised_estimate") return Handoff::denoised_estimate;
  throw std::invalid_argument("unknown handoff '" + s + "'");
}

/// What the detail-boost stage is conditioned on.
enum class GdbCondition { stage_output, degraded_input };

inline const char* to_string(GdbCondition c) {
  return c == GdbCondition::stage_output ? "stage_output" : "degraded_input";
}

inline GdbCondition gdb_condition_from_string(const std::string& s) {
  if (s == "stage_output") return GdbCondition::stage_output;
  if (s == "degraded_input") return GdbCondition::degraded_input;
  throw std::invalid_argument("unknown gdb condition '" + s + "'");
}

struct StageConfig {
  StageKind kind = StageKind::lrs;
  int resolution = 16;
  TimeWindow window;
  FilterFactor filter{2};                // LRS only
  double threshold = 2e-3;               // ADR only, on model-range pixels
  std::vector<FilterFactor> candidates;  // ADR only, coarse to fine
  std::string denoiser_id;

  bool operator==(const StageConfig&) const = default;
};

/// Knobs shared by every sampling loop.
struct SamplerOptions {
  FilterKernel kernel = FilterKernel::area_bilinear;
  SigmaMode sigma_mode = SigmaMode::fixed_beta;
  bool swap = true;  // false runs the no-swap ablation

  bool operator==(const SamplerOptions&) const = default;
};

struct PipelineConfig {
  std::vector<StageConfig> stages;
  std::map<int, ScheduleParams> schedules;  // keyed by resolution
  std::uint64_t seed = 0;
  SamplerOptions sampler;
  GdbCondition gdb_condition = GdbCondition::stage_output;
  Handoff handoff = Handoff::denoised_estimate;
  int snr_mc_samples = 4;  // draws per stitch-point SNR estimate in the trace

  bool operator==(const PipelineConfig&) const = default;

  const ScheduleParams& schedule_for(int resolution) const {
    auto it = schedules.find(resolution);
    if (it == schedules.end()) {
      throw std::invalid_argument("no schedule configured for resolution " +
                                  std::to_string(resolution));
    }
    return it->second;
  }

  /// Throws std::invalid_argument naming the offending stage.
  void validate() const {
    if (stages.size() < 3) throw std::invalid_argument("pipeline needs LRS, >= 1 ADR and GDB");
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const StageConfig& s = stages[i];
      const std::string where = "stage " + std::to_string(i) + " (" + to_string(s.kind) + "): ";
      const StageKind expected = i == 0 ? StageKind::lrs
                                 : i + 1 == stages.size() ? StageKind::gdb
                                                          : StageKind::adr;
      if (s.kind != expected) {
        throw std::invalid_argument(where + "stage order must be LRS, ADR..., GDB");
      }
      if (s.resolution < 1) throw std::invalid_argument(where + "resolution must be positive");
      if (i > 0 && s.resolution < stages[i - 1].resolution) {
        throw std::invalid_argument(where + "resolution decreases along the ladder");
      }
      const ScheduleParams& sp = schedule_for(s.resolution);
      try {
        s.window.validate(sp.steps);
      } catch (const std::invalid_argument& e) {
        throw std::invalid_argument(where + e.what());
      }
      if (s.kind == StageKind::gdb && s.window.t_end != 0) {
        throw std::invalid_argument(where + "GDB window must run to t_end = 0");
      }
      if (s.kind != StageKind::gdb && s.window.t_end < 1) {
        throw std::invalid_argument(where + "truncated window must end at t_end >= 1");
      }
      if (s.denoiser_id.empty()) throw std::invalid_argument(where + "missing denoiser id");
      if (s.kind == StageKind::lrs) {
        if (s.filter.n < 1 || s.resolution % s.filter.n != 0) {
          throw std::invalid_argument(where + "filter factor must divide the resolution");
        }
      }
      if (s.kind == StageKind::adr) {
        if (!(s.threshold > 0.0)) throw std::invalid_argument(where + "threshold must be > 0");
        if (s.candidates.empty()) throw std::invalid_argument(where + "empty candidate list");
        for (std::size_t k = 0; k < s.candidates.size(); ++k) {
          const int n = s.candidates[k].n;
          if (n < 1 || s.resolution % n != 0) {
            throw std::invalid_argument(where + "candidate " + std::to_string(n) +
                                        " does not divide the resolution");
          }
          if (k > 0 && n >= s.candidates[k - 1].n) {
            throw std::invalid_argument(where + "candidates must be strictly decreasing");
          }
        }
      }
    }
    if (snr_mc_samples < 1) throw std::invalid_argument("snr_mc_samples must be >= 1");
  }
};

using DenoiserSet = std::map<std::string, std::shared_ptr<const Denoiser>>;

/// Mean squared difference of the low bands of x_end and y.
inline double compute_l_adr(const Image& x_end, const Image& y, FilterFactor f,
                            FilterKernel kernel = FilterKernel::area_bilinear) {
  require_same_shape(x_end, y, "compute_l_adr");
  const Image a = lowpass(y, f, kernel);
  const Image b = lowpass(x_end, f, kernel);
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

struct SwapLoopResult {
  Image x_end;
  Image x0_estimate;
};

/// Reverse steps t = window.t_begin .. window.t_end + 1 starting from `x`. After
/// each step the low band of x_{t-1} is replaced by that of a fresh forward
/// sample y_{t-1} (skipped when options.swap is false). The last step's
/// prediction of x_0 is kept as well, with the low band of y swapped in.
inline SwapLoopResult truncated_swap_loop(Image x, const Image& y, TimeWindow window,
                                          FilterFactor f, const Denoiser& den,
                                          const VarianceSchedule& sched, SeededRng& rng,
                                          const SamplerOptions& options) {
  Image x0;
  for (int t = window.t_begin; t > window.t_end; --t) {
    const Image eps = den.predict_eps(x, t, nullptr);
    require_same_shape(x, eps, "swap loop prediction");
    if (t == window.t_end + 1) {
      const double ab = sched.alpha_bar(t);
      x0 = linear_combination(1.0 / std::sqrt(ab), x, -std::sqrt((1.0 - ab) / ab), eps);
    }
    x = reverse_mean(x, eps, t, sched);
    const double sigma = reverse_sigma(sched, t, options.sigma_mode);
    if (sigma > 0.0) {
      for (double& v : x.pixels()) v += sigma * rng.normal();
    }
    if (options.swap) {
      const Image y_prev =
          t - 1 >= 1 ? forward_sample(y, t - 1, rng.normal_like(y), sched) : y;
      x = freq_swap(x, y_prev, f, options.kernel);
    }
  }
  if (options.swap && x0.size() > 0) x0 = freq_swap(x0, y, f, options.kernel);
  return {std::move(x), std::move(x0)};
}

struct LrsResult {
  Image x_end;
  Image x0_estimate;
  int evaluations = 0;
};

/// Low-resolution startup: forward y to t_begin, then the swap loop with the
/// fixed factor N0 down to t_end.
inline LrsResult lrs_stage(const Image& y, const StageConfig& cfg, const Denoiser& den,
                           const VarianceSchedule& sched, SeededRng& rng,
                           const SamplerOptions& options = {}) {
  if (cfg.kind != StageKind::lrs) throw std::invalid_argument("lrs_stage: wrong stage kind");
  cfg.window.validate(sched.steps());
  if (cfg.window.t_end < 1) throw std::invalid_argument("lrs_stage: t_end must be >= 1");
  if (y.width() != cfg.resolution || y.height() != cfg.resolution) {
    throw std::invalid_argument("lrs_stage: input " + shape_string(y) +
                                " does not match resolution " + std::to_string(cfg.resolution));
  }
  Image x = forward_sample(y, cfg.window.t_begin, rng.normal_like(y), sched);
  auto r = truncated_swap_loop(std::move(x), y, cfg.window, cfg.filter, den, sched, rng, options);
  return {std::move(r.x_end), std::move(r.x0_estimate), cfg.window.length()};
}

struct AdrAttempt {
  int n = 0;
  double l_adr = 0.0;

  bool operator==(const AdrAttempt&) const = default;
};

struct AdrResult {
  Image x_end;
  Image x0_estimate;
  FilterFactor chosen;
  std::vector<AdrAttempt> attempts;
  bool exhausted = false;
  int evaluations = 0;
};

/// Adaptive degradation remover. Tries each candidate factor coarse to fine,
/// running the swap loop from forward_sample(x_in, t_begin) and accepting the
/// first candidate whose L_adr is within the threshold. Attempt i draws from
/// sub-stream i of `stage_seed`, so an attempt's outcome does not depend on
/// which attempts preceded it. When no candidate passes, the one with the
/// smallest L_adr is returned and flagged exhausted.
inline AdrResult adr_stage(const Image& y_up, const Image& x_in, const StageConfig& cfg,
                           const Denoiser& den, const VarianceSchedule& sched,
                           std::uint64_t stage_seed, const SamplerOptions& options = {}) {
  if (cfg.kind != StageKind::adr) throw std::invalid_argument("adr_stage: wrong stage kind");
  if (cfg.candidates.empty()) throw std::invalid_argument("adr_stage: empty candidate list");
  cfg.window.validate(sched.steps());
  require_same_shape(y_up, x_in, "adr_stage");
  if (x_in.width() != cfg.resolution || x_in.height() != cfg.resolution) {
    throw std::invalid_argument("adr_stage: input " + shape_string(x_in) +
                                " does not match resolution " + std::to_string(cfg.resolution));
  }
  AdrResult result;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cfg.candidates.size(); ++i) {
    const FilterFactor f = cfg.candidates[i];
    SeededRng rng(substream_seed(stage_seed, i));
    Image x = forward_sample(x_in, cfg.window.t_begin, rng.normal_like(x_in), sched);
    auto r = truncated_swap_loop(std::move(x), y_up, cfg.window, f, den, sched, rng, options);
    result.evaluations += cfg.window.length();
    const double l = compute_l_adr(r.x_end, y_up, f, options.kernel);
    result.attempts.push_back({f.n, l});
    if (l < best) {
      best = l;
      result.x_end = r.x_end;
      result.x0_estimate = r.x0_estimate;
      result.chosen = f;
    }
    if (l <= cfg.threshold) {
      result.x_end = std::move(r.x_end);
      result.x0_estimate = std::move(r.x0_estimate);
      result.chosen = f;
      result.exhausted = false;
      return result;
    }
  }
  result.exhausted = true;
  return result;
}

struct GdbResult {
  Image x0;
  int evaluations = 0;
};

/// Generative detail boost: forward x_in to t_begin and run the conditional
/// denoiser down to t = 1 without frequency swapping.
inline GdbResult gdb_stage(const Image& x_in, const Image& condition, const StageConfig& cfg,
                           const Denoiser& den, const VarianceSchedule& sched, SeededRng& rng,
                           const SamplerOptions& options = {}) {
  if (cfg.kind != StageKind::gdb) throw std::invalid_argument("gdb_stage: wrong stage kind");
  cfg.window.validate(sched.steps());
  if (cfg.window.t_end != 0) throw std::invalid_argument("gdb_stage: window must end at 0");
  if (!den.conditional()) {
    throw std::invalid_argument("gdb_stage: denoiser '" + cfg.denoiser_id +
                                "' does not accept a condition");
  }
  require_same_shape(x_in, condition, "gdb_stage");
  Image x = forward_sample(x_in, cfg.window.t_begin, rng.normal_like(x_in), sched);
  for (int t = cfg.window.t_begin; t >= 1; --t) {
    x = reverse_step(x, t, den, &condition, sched, rng, options.sigma_mode);
  }
  return {std::move(x), cfg.window.t_begin};
}

struct StageTrace {
  StageKind kind = StageKind::lrs;
  int resolution = 0;
  TimeWindow window;
  int chosen_n = 0;  // 0 for GDB
  double threshold = 0.0;
  std::vector<AdrAttempt> attempts;
  bool exhausted = false;
  int steps = 0;
  int evaluations = 0;
  std::uint64_t seed = 0;

  bool operator==(const StageTrace&) const = default;
};

/// SNR on both sides of a stage boundary, estimated on each stage's
/// conditioning image: the lower stage at its t_end, the upper at its t_begin.
struct StitchTrace {
  int from_stage = 0;
  int to_stage = 0;
  double snr_low_db = 0.0;
  double snr_high_db = 0.0;
  double gap_db = 0.0;

  bool operator==(const StitchTrace&) const = default;
};

struct RestorationTrace {
  std::vector<StageTrace> stages;
  std::vector<StitchTrace> stitches;
  int total_evaluations = 0;
  std::uint64_t seed = 0;

  bool any_exhausted() const {
    for (const auto& s : stages)
      if (s.exhausted) return true;
    return false;
  }

  bool operator==(const RestorationTrace&) const = default;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    os << "[run]\n"
       << "seed = " << seed << '\n'
       << "total_evaluations = " << total_evaluations << '\n'
       << "exhausted = " << (any_exhausted() ? 1 : 0) << '\n';
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const StageTrace& s = stages[i];
      os << "\n[stage " << i << "]\n"
         << "kind = " << to_string(s.kind) << '\n'
         << "resolution = " << s.resolution << '\n'
         << "t_begin = " << s.window.t_begin << '\n'
         << "t_end = " << s.window.t_end << '\n'
         << "chosen_n = " << s.chosen_n << '\n';
      if (s.kind == StageKind::adr) {
        os << "threshold = " << s.threshold << '\n'
           << "exhausted = " << (s.exhausted ? 1 : 0) << '\n';
        for (const auto& a : s.attempts) os << "attempt = " << a.n << ' ' << a.l_adr << '\n';
      }
      os << "steps = " << s.steps << '\n'
         << "evaluations = " << s.evaluations << '\n'
         << "seed = " << s.seed << '\n';
    }
    for (const auto& st : stitches) {
      os << "\n[stitch " << st.from_stage << "->" << st.to_stage << "]\n"
         << "snr_low_db = " << st.snr_low_db << '\n'
         << "snr_high_db = " << st.snr_high_db << '\n'
         << "gap_db = " << st.gap_db << '\n';
    }
    return os.str();
  }
};

/// Error raised by restore(), carrying the failing stage.
class StageError : public std::runtime_error {
 public:
  StageError(int stage, const std::string& reason)
      : std::runtime_error("stage " + std::to_string(stage) + ": " + reason), stage_(stage) {}
  int stage() const noexcept { return stage_; }

 private:
  int stage_;
};

struct RestoreResult {
  Image restored;  // display range, clamped to [0, 1]
  RestorationTrace trace;
};

inline const Denoiser& lookup_denoiser(const DenoiserSet& models, const std::string& id) {
  auto it = models.find(id);
  if (it == models.end() || !it->second) {
    throw std::invalid_argument("no denoiser registered as '" + id + "'");
  }
  return *it->second;
}

inline Image resize_to(const Image& img, int resolution, FilterKernel kernel) {
  return resize(img, resolution, resolution, kernel);
}

/// Full three-stage restoration of a degraded image `y` (either range tag).
///
/// y is brought to model range, resized to each stage's resolution and used
/// as that stage's conditioning image. Stage outputs are resized up the
/// ladder. Every stage draws from its own sub-stream of `seed`.
inline RestoreResult restore(const Image& y, const DenoiserSet& models,
                             const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const Image y_model = to_model_range(y);
  const SamplerOptions& opt = cfg.sampler;
  RestorationTrace trace;
  trace.seed = seed;

  std::vector<Image> conditioning(cfg.stages.size());
  std::vector<VarianceSchedule> schedules;
  for (const auto& s : cfg.stages) schedules.push_back(make_schedule(cfg.schedule_for(s.resolution)));

  Image current;
  for (std::size_t i = 0; i < cfg.stages.size(); ++i) {
    const StageConfig& sc = cfg.stages[i];
    const std::uint64_t stage_seed = substream_seed(seed, i);
    StageTrace st;
    st.kind = sc.kind;
    st.resolution = sc.resolution;
    st.window = sc.window;
    st.seed = stage_seed;
    try {
      const Denoiser& den = lookup_denoiser(models, sc.denoiser_id);
      const VarianceSchedule& sched = schedules[i];
      conditioning[i] = resize_to(y_model, sc.resolution, opt.kernel);
      switch (sc.kind) {
        case StageKind::lrs: {
          SeededRng rng(stage_seed);
          auto r = lrs_stage(conditioning[i], sc, den, sched, rng, opt);
          current = cfg.handoff == Handoff::noisy_sample ? std::move(r.x_end)
                                                         : std::move(r.x0_estimate);
          st.chosen_n = sc.filter.n;
          st.evaluations = r.evaluations;
          st.steps = sc.window.length();
          break;
        }
        case StageKind::adr: {
          const Image x_in = resize_to(current, sc.resolution, opt.kernel);
          auto r = adr_stage(conditioning[i], x_in, sc, den, sched, stage_seed, opt);
          current = cfg.handoff == Handoff::noisy_sample ? std::move(r.x_end)
                                                         : std::move(r.x0_estimate);
          st.chosen_n = r.chosen.n;
          st.threshold = sc.threshold;
          st.attempts = std::move(r.attempts);
          st.exhausted = r.exhausted;
          st.evaluations = r.evaluations;
          st.steps = sc.window.length() * static_cast<int>(st.attempts.size());
          break;
        }
        case StageKind::gdb: {
          const Image x_in = resize_to(current, sc.resolution, opt.kernel);
          const Image& cond =
              cfg.gdb_condition == GdbCondition::stage_output ? x_in : conditioning[i];
          SeededRng rng(stage_seed);
          auto r = gdb_stage(x_in, cond, sc, den, sched, rng, opt);
          current = std::move(r.x0);
          st.evaluations = r.evaluations;
          st.steps = sc.window.length();
          break;
        }
      }
      if (i > 0) {
        const std::uint64_t snr_seed = substream_seed(stage_seed, 0xABCDu);
        StitchTrace stitch;
        stitch.from_stage = static_cast<int>(i) - 1;
        stitch.to_stage = static_cast<int>(i);
        stitch.snr_low_db = expected_snr_at({conditioning[i - 1]}, schedules[i - 1],
                                            cfg.stages[i - 1].window.t_end,
                                            cfg.snr_mc_samples, snr_seed).first;
        stitch.snr_high_db = expected_snr_at({conditioning[i]}, schedules[i], sc.window.t_begin,
                                             cfg.snr_mc_samples, snr_seed).first;
        stitch.gap_db = std::abs(stitch.snr_high_db - stitch.snr_low_db);
        trace.stitches.push_back(stitch);
      }
    } catch (const StageError&) {
      throw;
    } catch (const std::exception& e) {
      throw StageError(static_cast<int>(i), e.what());
    }
    trace.total_evaluations += st.evaluations;
    trace.stages.push_back(std::move(st));
  }
  Image out = clamped(to_display_range(current), 0.0, 1.0);
  return {std::move(out), std::move(trace)};
}

/// Full-chain reference at the top resolution: start from pure noise at t = T
/// and run every step with the GDB denoiser conditioned on the resized input.
inline Image baseline_restore(const Image& y, const DenoiserSet& models, const PipelineConfig& cfg,
                              std::uint64_t seed) {
  cfg.validate();
  const StageConfig& top = cfg.stages.back();
  const VarianceSchedule sched = make_schedule(cfg.schedule_for(top.resolution));
  const Denoiser& den = lookup_denoiser(models, top.denoiser_id);
  const Image cond = resize_to(to_model_range(y), top.resolution, cfg.sampler.kernel);
  SeededRng rng(seed);
  Image x = rng.normal_like(cond);
  for (int t = sched.steps(); t >= 1; --t) {
    x = reverse_step(x, t, den, den.conditional() ? &cond : nullptr, sched, rng,
                     cfg.sampler.sigma_mode);
  }
  return clamped(to_display_range(x), 0.0, 1.0);
}

struct StepBudget {
  int truncated_evals = 0;
  int full_baseline_evals = 0;
  double ratio = 0.0;
};

/// Denoiser evaluations of the truncated pipeline (one ADR attempt per stage)
/// against a full chain at the highest resolution.
inline StepBudget step_budget(const PipelineConfig& cfg) {
  StepBudget b;
  int top = 0;
  for (const auto& s : cfg.stages) {
    b.truncated_evals += s.window.length();
    top = std::max(top, s.resolution);
  }
  b.full_baseline_evals = cfg.schedule_for(top).steps;
  b.ratio = static_cast<double>(b.full_baseline_evals) / b.truncated_evals;
  return b;
}

}  // namespace tdbfr
