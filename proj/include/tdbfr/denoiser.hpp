#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "tdbfr/image.hpp"
#include "tdbfr/rng.hpp"
#include "tdbfr/schedule.hpp"

namespace tdbfr {

/// Anything that predicts the noise eps in x_t = sqrt(abar) x_0 + sqrt(1 - abar) eps.
///
/// Implementations must be deterministic and return an image of x_t's shape.
/// `condition` is null for unconditional use.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Image predict_eps(const Image& x_t, int t, const Image* condition) const = 0;
  virtual bool conditional() const { return false; }
};

/// Exact eps-predictor for data x_0 ~ N(mu, sigma2 I).
///
///   E[x_0 | x_t] = (sqrt(abar) sigma2 x_t + (1 - abar) mu) / (abar sigma2 + 1 - abar)
///   eps_hat      = (x_t - sqrt(abar) E[x_0 | x_t]) / sqrt(1 - abar)
class AnalyticGaussianDenoiser final : public Denoiser {
 public:
  AnalyticGaussianDenoiser(Image mu, double sigma2, VarianceSchedule sched)
      : mu_(std::move(mu)), sigma2_(sigma2), sched_(std::move(sched)) {
    if (!(sigma2_ >= 0.0)) throw std::invalid_argument("analytic denoiser: sigma2 must be >= 0");
    if (!all_finite(mu_)) throw std::invalid_argument("analytic denoiser: mu must be finite");
  }

  Image posterior_mean(const Image& x_t, int t) const {
    require_same_shape(x_t, mu_, "analytic denoiser");
    const double ab = sched_.alpha_bar(t);
    const double den = ab * sigma2_ + 1.0 - ab;
    return linear_combination(std::sqrt(ab) * sigma2_ / den, x_t, (1.0 - ab) / den, mu_);
  }

  Image predict_eps(const Image& x_t, int t, const Image* /*condition*/) const override {
    const double ab = sched_.alpha_bar(t);
    const Image x0 = posterior_mean(x_t, t);
    Image out = x_t;
    const double s = std::sqrt(ab);
    const double inv = 1.0 / std::sqrt(1.0 - ab);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - s * x0[i]) * inv;
    return out;
  }

  const Image& mu() const noexcept { return mu_; }
  double sigma2() const noexcept { return sigma2_; }
  const VarianceSchedule& schedule() const noexcept { return sched_; }

 private:
  Image mu_;
  double sigma2_;
  VarianceSchedule sched_;
};

/// Predicts eps = 0 everywhere. Accepts a condition and ignores it.
class ZeroDenoiser final : public Denoiser {
 public:
  explicit ZeroDenoiser(bool conditional = false) : conditional_(conditional) {}
  Image predict_eps(const Image& x_t, int, const Image*) const override {
    Image out = x_t;
    std::fill(out.pixels().begin(), out.pixels().end(), 0.0);
    return out;
  }
  bool conditional() const override { return conditional_; }

 private:
  bool conditional_;
};

/// Variance of the reverse transition.
enum class SigmaMode {
  fixed_beta,  // sigma_t^2 = beta_t
  posterior,   // sigma_t^2 = (1 - abar_{t-1}) / (1 - abar_t) beta_t
  zero,        // deterministic mean path
};

inline const char* to_string(SigmaMode m) {
  switch (m) {
    case SigmaMode::fixed_beta: return "fixed_beta";
    case SigmaMode::posterior: return "posterior";
    case SigmaMode::zero: return "zero";
  }
  return "?";
}

inline SigmaMode sigma_mode_from_string(const std::string& s) {
  if (s == "fixed_beta") return SigmaMode::fixed_beta;
  if (s == "posterior") return SigmaMode::posterior;
  if (s == "zero") return SigmaMode::zero;
  throw std::invalid_argument("unknown sigma mode '" + s + "'");
}

inline double reverse_sigma(const VarianceSchedule& sched, int t, SigmaMode mode) {
  if (t == 1 || mode == SigmaMode::zero) return 0.0;
  return mode == SigmaMode::fixed_beta ? std::sqrt(sched.beta(t))
                                       : std::sqrt(sched.posterior_variance(t));
}

/// mu_theta(x_t, t) given a noise prediction.
inline Image reverse_mean(const Image& x_t, const Image& eps_hat, int t,
                          const VarianceSchedule& sched) {
  require_same_shape(x_t, eps_hat, "reverse_mean");
  const double a = sched.alpha(t);
  const double k = (1.0 - a) / std::sqrt(1.0 - sched.alpha_bar(t));
  const double inv = 1.0 / std::sqrt(a);
  Image out = x_t;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t[i] - k * eps_hat[i]) * inv;
  return out;
}

/// One ancestral step x_t -> x_{t-1} = mu_theta(x_t, t) + sigma_t z.
/// The t = 1 step adds no noise and draws nothing from `rng`.
inline Image reverse_step(const Image& x_t, int t, const Denoiser& den, const Image* condition,
                          const VarianceSchedule& sched, SeededRng& rng,
                          SigmaMode mode = SigmaMode::fixed_beta) {
  if (!sched.contains(t)) throw std::out_of_range("reverse_step: step out of range");
  if (condition) require_same_shape(x_t, *condition, "reverse_step condition");
  const Image eps_hat = den.predict_eps(x_t, t, condition);
  require_same_shape(x_t, eps_hat, "reverse_step prediction");
  Image out = reverse_mean(x_t, eps_hat, t, sched);
  const double sigma = reverse_sigma(sched, t, mode);
  if (sigma > 0.0) {
    for (double& v : out.pixels()) v += sigma * rng.normal();
  }
  return out;
}

}  // namespace tdbfr
