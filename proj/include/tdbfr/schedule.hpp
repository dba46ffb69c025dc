#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdbfr/image.hpp"
#include "tdbfr/rng.hpp"

namespace tdbfr {

enum class ScheduleKind { linear, scaled_linear };

inline const char* to_string(ScheduleKind k) {
  return k == ScheduleKind::linear ? "linear" : "scaled_linear";
}

inline ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::linear;
  if (s == "scaled_linear") return ScheduleKind::scaled_linear;
  throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

struct ScheduleParams {
  ScheduleKind kind = ScheduleKind::linear;
  int steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;

  bool operator==(const ScheduleParams&) const = default;
};

/// Endpoints of a schedule defined at 1000 steps, rescaled by 1000/T so that
/// a shorter chain destroys roughly the same amount of signal.
inline ScheduleParams rescaled_params(ScheduleKind kind, int steps, double beta_start_1000,
                                      double beta_end_1000) {
  const double scale = 1000.0 / steps;
  return {kind, steps, beta_start_1000 * scale, beta_end_1000 * scale};
}

/// beta/alpha/alpha-bar tables of one diffusion model.
///
/// Step indices t are 1-based (t = 1..T) as in the DDPM literature; storage is
/// zero-based, so step t lives at index t - 1.
class VarianceSchedule {
 public:
  VarianceSchedule() = default;

  explicit VarianceSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
    if (betas_.size() < 2) throw std::invalid_argument("schedule needs at least 2 steps");
    alphas_.resize(betas_.size());
    alpha_bars_.resize(betas_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < betas_.size(); ++i) {
      const double b = betas_[i];
      if (!(b > 0.0 && b < 1.0)) {
        throw std::invalid_argument("schedule betas must lie in (0, 1)");
      }
      alphas_[i] = 1.0 - b;
      prod *= alphas_[i];
      alpha_bars_[i] = prod;
    }
  }

  int steps() const noexcept { return static_cast<int>(betas_.size()); }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bars_[index(t)]; }
  /// alpha-bar with the t = 0 convention alpha_bar(0) = 1.
  double alpha_bar_or_one(int t) const { return t == 0 ? 1.0 : alpha_bar(t); }

  /// Posterior variance of q(x_{t-1} | x_t, x_0).
  double posterior_variance(int t) const {
    if (t == 1) return 0.0;
    return (1.0 - alpha_bar(t - 1)) / (1.0 - alpha_bar(t)) * beta(t);
  }

  const std::vector<double>& betas() const noexcept { return betas_; }
  const std::vector<double>& alphas() const noexcept { return alphas_; }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bars_; }

  bool contains(int t) const noexcept { return t >= 1 && t <= steps(); }

 private:
  std::size_t index(int t) const {
    if (!contains(t)) {
      throw std::out_of_range("step " + std::to_string(t) + " outside [1, " +
                              std::to_string(steps()) + "]");
    }
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

inline void check_schedule_params(int steps, double beta_start, double beta_end) {
  if (steps < 2) throw std::invalid_argument("schedule: T must be >= 2");
  if (!(beta_start > 0.0)) throw std::invalid_argument("schedule: beta_start must be > 0");
  if (!(beta_end < 1.0)) throw std::invalid_argument("schedule: beta_end must be < 1");
  if (beta_start > beta_end) throw std::invalid_argument("schedule: beta_start > beta_end");
}

inline VarianceSchedule make_linear_schedule(int steps, double beta_start, double beta_end) {
  check_schedule_params(steps, beta_start, beta_end);
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    betas[i] = beta_start + (beta_end - beta_start) * static_cast<double>(i) / (steps - 1);
  }
  return VarianceSchedule(std::move(betas));
}

/// Linear in sqrt(beta), then squared (the latent-diffusion convention).
inline VarianceSchedule make_scaled_linear_schedule(int steps, double beta_start,
                                                    double beta_end) {
  check_schedule_params(steps, beta_start, beta_end);
  const double s0 = std::sqrt(beta_start);
  const double s1 = std::sqrt(beta_end);
  std::vector<double> betas(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double s = s0 + (s1 - s0) * static_cast<double>(i) / (steps - 1);
    betas[i] = s * s;
  }
  return VarianceSchedule(std::move(betas));
}

inline VarianceSchedule make_schedule(const ScheduleParams& p) {
  return p.kind == ScheduleKind::linear
             ? make_linear_schedule(p.steps, p.beta_start, p.beta_end)
             : make_scaled_linear_schedule(p.steps, p.beta_start, p.beta_end);
}

/// FNV-1a over the beta table's bytes, hex encoded. Identifies the schedule a
/// model was trained against.
inline std::string schedule_hash(const VarianceSchedule& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double b : s.betas()) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(&b);
    for (std::size_t i = 0; i < sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Contiguous part of the chain that a stage executes: reverse steps
/// t = t_begin, ..., t_end + 1, producing x_{t_end}. A window with t_end = 0
/// runs all the way to the clean sample.
struct TimeWindow {
  int t_begin = 0;
  int t_end = 0;

  int length() const noexcept { return t_begin - t_end; }

  void validate(int steps) const {
    if (t_end < 0 || t_end >= t_begin || t_begin > steps) {
      throw std::invalid_argument("invalid time window [t_end=" + std::to_string(t_end) +
                                  ", t_begin=" + std::to_string(t_begin) + "] for T=" +
                                  std::to_string(steps));
    }
  }

  bool operator==(const TimeWindow&) const = default;
};

/// x_t = sqrt(alpha_bar_t) x_0 + sqrt(1 - alpha_bar_t) eps.
inline Image forward_sample(const Image& x0, int t, const Image& eps,
                            const VarianceSchedule& sched) {
  require_same_shape(x0, eps, "forward_sample");
  const double ab = sched.alpha_bar(t);
  return linear_combination(std::sqrt(ab), x0, std::sqrt(1.0 - ab), eps);
}

/// 10 log10(sum x_t^2 / sum (x_t - x_0)^2).
///
/// Returns +infinity when x_t == x_0 (and x_t is nonzero), -infinity when x_t
/// is all zeros but x_0 is not. Throws std::domain_error when both sums vanish.
inline double snr(const Image& x_t, const Image& x0) {
  require_same_shape(x_t, x0, "snr");
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < x_t.size(); ++i) {
    num += x_t[i] * x_t[i];
    const double d = x_t[i] - x0[i];
    den += d * d;
  }
  if (den == 0.0) {
    if (num == 0.0) throw std::domain_error("snr undefined: x_t and x_0 are both all-zero");
    return std::numeric_limits<double>::infinity();
  }
  if (num == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(num / den);
}

/// Expected SNR in dB for t = 1..T at one resolution. Step t lives at index t - 1.
struct SnrCurve {
  int resolution = 0;
  std::vector<double> values;
  std::vector<double> stderr_db;
  int mc_samples = 0;

  int steps() const noexcept { return static_cast<int>(values.size()); }
  double at(int t) const {
    if (t < 1 || t > steps()) throw std::out_of_range("snr curve: step out of range");
    return values[static_cast<std::size_t>(t - 1)];
  }
};

namespace detail {

/// Neumaier-compensated accumulator.
struct CompensatedSum {
  double sum = 0.0;
  double comp = 0.0;
  void add(double v) {
    const double t = sum + v;
    if (std::abs(sum) >= std::abs(v)) {
      comp += (sum - t) + v;
    } else {
      comp += (v - t) + sum;
    }
    sum = t;
  }
  double value() const { return sum + comp; }
};

}  // namespace detail

/// Monte-Carlo SNR estimate at a single step over `dataset` x `mc_samples`
/// draws. Returns {mean, standard error}.
inline std::pair<double, double> expected_snr_at(const std::vector<Image>& dataset,
                                                 const VarianceSchedule& sched, int t,
                                                 int mc_samples, std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("expected_snr: empty dataset");
  if (mc_samples < 1) throw std::invalid_argument("expected_snr: mc_samples must be >= 1");
  SeededRng rng(substream_seed(seed, static_cast<std::uint64_t>(t)));
  detail::CompensatedSum sum;
  detail::CompensatedSum sum_sq;
  const int n = static_cast<int>(dataset.size()) * mc_samples;
  for (const Image& x0 : dataset) {
    if (!x0.same_shape(dataset.front())) {
      throw std::invalid_argument("expected_snr: dataset shapes differ");
    }
    for (int d = 0; d < mc_samples; ++d) {
      const double v = snr(forward_sample(x0, t, rng.normal_like(x0), sched), x0);
      sum.add(v);
      sum_sq.add(v * v);
    }
  }
  const double m = sum.value() / n;
  const double var = n > 1 ? std::max(0.0, (sum_sq.value() - n * m * m) / (n - 1)) : 0.0;
  return {m, std::sqrt(var / n)};
}

/// SNR(t) averaged over the dataset and `mc_samples` noise draws per image.
/// Each step uses its own sub-stream of `seed`, so the result is independent of
/// evaluation order.
inline SnrCurve expected_snr_curve(const std::vector<Image>& dataset,
                                   const VarianceSchedule& sched, int mc_samples,
                                   std::uint64_t seed) {
  if (dataset.empty()) throw std::invalid_argument("expected_snr_curve: empty dataset");
  SnrCurve curve;
  curve.resolution = dataset.front().width();
  curve.mc_samples = mc_samples;
  curve.values.resize(static_cast<std::size_t>(sched.steps()));
  curve.stderr_db.resize(curve.values.size());
  for (int t = 1; t <= sched.steps(); ++t) {
    auto [m, se] = expected_snr_at(dataset, sched, t, mc_samples, seed);
    curve.values[static_cast<std::size_t>(t - 1)] = m;
    curve.stderr_db[static_cast<std::size_t>(t - 1)] = se;
  }
  return curve;
}

/// argmin_t |curve(t) - target|, ties resolved toward the smaller t.
/// Throws std::domain_error("no comparable SNR") when the target lies more than
/// `guard_db` outside the curve's range.
inline int match_breakpoint(double target_snr_db, const SnrCurve& high_curve,
                            double guard_db = 3.0) {
  if (high_curve.values.empty()) throw std::invalid_argument("match_breakpoint: empty curve");
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (double v : high_curve.values) {
    if (!std::isfinite(v)) continue;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (!std::isfinite(target_snr_db) || target_snr_db < lo - guard_db ||
      target_snr_db > hi + guard_db) {
    throw std::domain_error("no comparable SNR for target " + std::to_string(target_snr_db) +
                            " dB at resolution " + std::to_string(high_curve.resolution));
  }
  int best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (int t = 1; t <= high_curve.steps(); ++t) {
    const double dist = std::abs(high_curve.at(t) - target_snr_db);
    if (dist < best_dist) {
      best_dist = dist;
      best = t;
    }
  }
  return best;
}

struct NoiseStats {
  double mean = 0.0;
  double variance = 0.0;
};

/// Mean and variance over all pixels and draws of forward_sample(x0, t, eps) - x0.
inline NoiseStats noise_consistency(const Image& x0, const VarianceSchedule& sched, int t,
                                    int mc_samples, std::uint64_t seed) {
  if (mc_samples < 1) throw std::invalid_argument("noise_consistency: mc_samples must be >= 1");
  SeededRng rng(seed);
  double count = 0.0;
  double m = 0.0;
  double m2 = 0.0;
  for (int d = 0; d < mc_samples; ++d) {
    const Image diff = forward_sample(x0, t, rng.normal_like(x0), sched) - x0;
    for (double v : diff.pixels()) {
      count += 1.0;
      const double delta = v - m;
      m += delta / count;
      m2 += delta * (v - m);
    }
  }
  return {m, count > 1 ? m2 / (count - 1) : 0.0};
}

/// One stitched stage of a cross-resolution plan.
struct PlanEntry {
  int resolution = 0;
  int t_begin = 0;
  int t_end = 0;
  double matched_snr_db = 0.0;

  bool operator==(const PlanEntry&) const = default;
};

using BreakpointPlan = std::vector<PlanEntry>;

/// Chains truncation windows across stages by SNR matching.
///
/// Stage 0 uses `first`. Every later stage i starts at the step whose SNR on
/// curves[i] is closest to curves[i-1] at the previous stage's t_end, and runs
/// `lengths[i]` steps. When `last_runs_to_zero` is set the final stage ignores
/// its length and runs to t = 0. matched_snr_db records curves[i] at t_begin.
inline BreakpointPlan plan_breakpoints(const std::vector<SnrCurve>& curves, TimeWindow first,
                                       const std::vector<int>& lengths,
                                       bool last_runs_to_zero = true, double guard_db = 3.0) {
  if (curves.empty() || curves.size() != lengths.size()) {
    throw std::invalid_argument("plan_breakpoints: need one curve and one length per stage");
  }
  first.validate(curves.front().steps());
  BreakpointPlan plan;
  plan.push_back({curves.front().resolution, first.t_begin, first.t_end,
                  curves.front().at(first.t_begin)});
  for (std::size_t i = 1; i < curves.size(); ++i) {
    const double target = curves[i - 1].at(plan.back().t_end);
    const int t_begin = match_breakpoint(target, curves[i], guard_db);
    const bool last = i + 1 == curves.size();
    const int t_end = last && last_runs_to_zero ? 0 : t_begin - lengths[i];
    if (t_end < (last && last_runs_to_zero ? 0 : 1) || t_end >= t_begin) {
      throw std::invalid_argument("plan_breakpoints: stage " + std::to_string(i) +
                                  " window of length " + std::to_string(lengths[i]) +
                                  " does not fit below matched t_begin=" +
                                  std::to_string(t_begin));
    }
    plan.push_back({curves[i].resolution, t_begin, t_end, curves[i].at(t_begin)});
  }
  return plan;
}

/// Plain key-value document, one block per stage separated by blank lines.
inline std::string plan_to_text(const BreakpointPlan& plan) {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    if (i) os << '\n';
    os << "resolution = " << plan[i].resolution << '\n'
       << "t_begin = " << plan[i].t_begin << '\n'
       << "t_end = " << plan[i].t_end << '\n'
       << "matched_snr_db = " << plan[i].matched_snr_db << '\n';
  }
  return os.str();
}

inline BreakpointPlan plan_from_text(const std::string& text) {
  BreakpointPlan plan;
  std::istringstream is(text);
  std::string line;
  PlanEntry cur;
  int fields = 0;
  auto flush = [&] {
    if (fields == 0) return;
    if (fields != 4) throw std::invalid_argument("breakpoint plan: incomplete block");
    plan.push_back(cur);
    cur = {};
    fields = 0;
  };
  while (std::getline(is, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) {
      flush();
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("breakpoint plan: bad line '" + line + "'");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "resolution") cur.resolution = std::stoi(value);
    else if (key == "t_begin") cur.t_begin = std::stoi(value);
    else if (key == "t_end") cur.t_end = std::stoi(value);
    else if (key == "matched_snr_db") cur.matched_snr_db = std::stod(value);
    else throw std::invalid_argument("breakpoint plan: unknown key '" + key + "'");
    ++fields;
  }
  flush();
  return plan;
}

}  // namespace tdbfr
