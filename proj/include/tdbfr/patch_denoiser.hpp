#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdbfr/denoiser.hpp"
#include "tdbfr/image.hpp"
#include "tdbfr/jpeg.hpp"
#include "tdbfr/rng.hpp"
#include "tdbfr/schedule.hpp"

namespace tdbfr {

struct PatchFitConfig {
  int radius = 1;             // patch is (2k+1)^2
  int buckets = 16;           // uniform partition of [1, T]
  double ridge_lambda = 1e-3;
  int samples_per_bucket = 20000;
  int pixels_per_draw = 256;  // pixels sampled from each noised image
  bool conditional = true;    // concatenate the degraded image's patch

  bool operator==(const PatchFitConfig&) const = default;
};

/// Clean image and its degraded counterpart, already resized to the clean shape.
/// `degraded` may be empty for unconditional fits.
struct TrainingPair {
  Image clean;
  Image degraded;
};

struct BucketLoss {
  double loss = 0.0;      // mean squared eps error of the fitted predictor
  double baseline = 0.0;  // same for the all-zero predictor
};

/// Per-time-bucket affine map from concatenated local patches to eps at the centre pixel.
///
/// Features for pixel (y, x): every channel of x_t's (2k+1)^2 neighbourhood,
/// then the same for the condition when the model is conditional, then a
/// constant 1. Borders use reflect-101 indexing. Each output channel has its
/// own weight vector.
class PatchDenoiserModel final : public Denoiser {
 public:
  static constexpr int kFormatVersion = 1;

  PatchDenoiserModel() = default;

  PatchDenoiserModel(int steps, std::string schedule_hash, int radius, int channels,
                     bool conditional, double ridge_lambda, std::vector<int> edges)
      : steps_(steps),
        schedule_hash_(std::move(schedule_hash)),
        radius_(radius),
        channels_(channels),
        conditional_(conditional),
        ridge_lambda_(ridge_lambda),
        edges_(std::move(edges)) {
    validate_layout();
    weights_.assign(static_cast<std::size_t>(buckets()) * channels_ * feature_dim(), 0.0);
    losses_.assign(static_cast<std::size_t>(buckets()), {});
  }

  /// Uniform bucket boundaries: edges[b] = 1 + round(b T / B), edges[B] = T + 1.
  static std::vector<int> uniform_edges(int steps, int buckets) {
    if (buckets < 1 || buckets > steps) {
      throw std::invalid_argument("bucket count must be in [1, T]");
    }
    std::vector<int> edges(static_cast<std::size_t>(buckets) + 1);
    for (int b = 0; b <= buckets; ++b) {
      edges[b] = 1 + static_cast<int>(std::lround(static_cast<double>(b) * steps / buckets));
    }
    return edges;
  }

  int steps() const noexcept { return steps_; }
  const std::string& schedule_hash() const noexcept { return schedule_hash_; }
  int radius() const noexcept { return radius_; }
  int channels() const noexcept { return channels_; }
  bool conditional() const override { return conditional_; }
  double ridge_lambda() const noexcept { return ridge_lambda_; }
  int buckets() const noexcept { return static_cast<int>(edges_.size()) - 1; }
  const std::vector<int>& edges() const noexcept { return edges_; }
  const std::vector<BucketLoss>& losses() const noexcept { return losses_; }
  std::vector<BucketLoss>& losses() noexcept { return losses_; }

  int patch_size() const noexcept { return (2 * radius_ + 1) * (2 * radius_ + 1); }
  int feature_dim() const noexcept {
    return (conditional_ ? 2 : 1) * channels_ * patch_size() + 1;
  }

  int bucket_of(int t) const {
    if (t < 1 || t > steps_) throw std::out_of_range("patch denoiser: step out of range");
    for (int b = 0; b < buckets(); ++b) {
      if (t < edges_[b + 1]) return b;
    }
    return buckets() - 1;
  }

  std::span<double> weights(int bucket, int channel) {
    return {weights_.data() + offset(bucket, channel), static_cast<std::size_t>(feature_dim())};
  }
  std::span<const double> weights(int bucket, int channel) const {
    return {weights_.data() + offset(bucket, channel), static_cast<std::size_t>(feature_dim())};
  }

  /// Writes the feature vector of pixel (y, x) into `out` (size feature_dim()).
  void features(const Image& x_t, const Image* condition, int y, int x,
                std::span<double> out) const {
    std::size_t k = 0;
    auto gather = [&](const Image& img) {
      for (int c = 0; c < channels_; ++c)
        for (int dy = -radius_; dy <= radius_; ++dy) {
          const int sy = jpeg::reflect_index(y + dy, img.height());
          for (int dx = -radius_; dx <= radius_; ++dx)
            out[k++] = img.at(c, sy, jpeg::reflect_index(x + dx, img.width()));
        }
    };
    gather(x_t);
    if (conditional_) gather(*condition);
    out[k] = 1.0;
  }

  Image predict_eps(const Image& x_t, int t, const Image* condition) const override {
    if (x_t.channels() != channels_) {
      throw std::invalid_argument("patch denoiser: expected " + std::to_string(channels_) +
                                  " channels, got " + shape_string(x_t));
    }
    if (conditional_) {
      if (!condition) throw std::invalid_argument("patch denoiser: model requires a condition");
      require_same_shape(x_t, *condition, "patch denoiser condition");
    }
    const int b = bucket_of(t);
    Image out(x_t.width(), x_t.height(), channels_, x_t.range());
    std::vector<double> phi(static_cast<std::size_t>(feature_dim()));
    for (int y = 0; y < x_t.height(); ++y) {
      for (int x = 0; x < x_t.width(); ++x) {
        features(x_t, condition, y, x, phi);
        for (int c = 0; c < channels_; ++c) {
          const auto w = weights(b, c);
          double acc = 0.0;
          for (std::size_t i = 0; i < phi.size(); ++i) acc += w[i] * phi[i];
          out.at(c, y, x) = acc;
        }
      }
    }
    return out;
  }

  void save(std::ostream& os) const {
    os.precision(17);
    os << "tdbfr-patch-denoiser\n"
       << "version " << kFormatVersion << '\n'
       << "schedule_hash " << schedule_hash_ << '\n'
       << "steps " << steps_ << '\n'
       << "radius " << radius_ << '\n'
       << "channels " << channels_ << '\n'
       << "conditional " << (conditional_ ? 1 : 0) << '\n'
       << "ridge_lambda " << ridge_lambda_ << '\n'
       << "buckets " << buckets() << '\n'
       << "edges";
    for (int e : edges_) os << ' ' << e;
    os << '\n';
    for (int b = 0; b < buckets(); ++b) {
      os << "loss " << b << ' ' << losses_[b].loss << ' ' << losses_[b].baseline << '\n';
      for (int c = 0; c < channels_; ++c) {
        os << "weights " << b << ' ' << c;
        for (double w : weights(b, c)) os << ' ' << w;
        os << '\n';
      }
    }
    os << "end\n";
  }

  static PatchDenoiserModel load(std::istream& is) {
    auto fail = [](const std::string& why) -> PatchDenoiserModel {
      throw std::runtime_error("patch denoiser model: " + why);
    };
    std::string magic;
    if (!(is >> magic) || magic != "tdbfr-patch-denoiser") return fail("not a model file");
    auto expect_key = [&](const char* key) {
      std::string k;
      if (!(is >> k) || k != key) fail(std::string("expected '") + key + "'");
    };
    int version = 0;
    expect_key("version");
    if (!(is >> version)) return fail("unreadable version");
    if (version != kFormatVersion) {
      return fail("unsupported version " + std::to_string(version) + " (expected " +
                  std::to_string(kFormatVersion) + ")");
    }
    std::string hash;
    int steps = 0, radius = 0, channels = 0, cond = 0, buckets = 0;
    double lambda = 0.0;
    expect_key("schedule_hash");
    is >> hash;
    expect_key("steps");
    is >> steps;
    expect_key("radius");
    is >> radius;
    expect_key("channels");
    is >> channels;
    expect_key("conditional");
    is >> cond;
    expect_key("ridge_lambda");
    is >> lambda;
    expect_key("buckets");
    is >> buckets;
    if (!is || buckets < 1 || buckets > 100000) return fail("corrupt header");
    expect_key("edges");
    std::vector<int> edges(static_cast<std::size_t>(buckets) + 1);
    for (int& e : edges) is >> e;
    if (!is) return fail("corrupt bucket edges");
    PatchDenoiserModel model;
    try {
      model = PatchDenoiserModel(steps, hash, radius, channels, cond != 0, lambda, edges);
    } catch (const std::invalid_argument& e) {
      return fail(e.what());
    }
    for (int b = 0; b < buckets; ++b) {
      int idx = -1;
      expect_key("loss");
      is >> idx >> model.losses_[b].loss >> model.losses_[b].baseline;
      if (!is || idx != b) return fail("corrupt loss record");
      for (int c = 0; c < channels; ++c) {
        int bi = -1, ci = -1;
        expect_key("weights");
        is >> bi >> ci;
        if (!is || bi != b || ci != c) return fail("corrupt weight record");
        for (double& w : model.weights(b, c)) is >> w;
        if (!is) return fail("truncated weights");
        for (double w : model.weights(b, c))
          if (!std::isfinite(w)) return fail("non-finite weight");
      }
    }
    expect_key("end");
    return model;
  }

 private:
  std::size_t offset(int bucket, int channel) const {
    return (static_cast<std::size_t>(bucket) * channels_ + channel) *
           static_cast<std::size_t>(feature_dim());
  }

  void validate_layout() const {
    if (steps_ < 2) throw std::invalid_argument("model steps must be >= 2");
    if (radius_ < 0) throw std::invalid_argument("patch radius must be >= 0");
    if (channels_ != 1 && channels_ != 3) throw std::invalid_argument("channels must be 1 or 3");
    if (!(ridge_lambda_ >= 0.0)) throw std::invalid_argument("ridge_lambda must be >= 0");
    if (edges_.size() < 2 || edges_.front() != 1 || edges_.back() != steps_ + 1) {
      throw std::invalid_argument("bucket edges must cover [1, T]");
    }
    for (std::size_t i = 1; i < edges_.size(); ++i) {
      if (edges_[i] <= edges_[i - 1]) throw std::invalid_argument("bucket edges must increase");
    }
  }

  int steps_ = 0;
  std::string schedule_hash_;
  int radius_ = 0;
  int channels_ = 1;
  bool conditional_ = false;
  double ridge_lambda_ = 0.0;
  std::vector<int> edges_;
  std::vector<double> weights_;
  std::vector<BucketLoss> losses_;
};

namespace detail {

// Sufficient statistics of one bucket's least-squares problem.
struct NormalEquations {
  Eigen::MatrixXd gram;  // sum phi phi^T
  Eigen::MatrixXd cross; // sum phi eps^T, one column per channel
  Eigen::VectorXd eps_sq;
  double count = 0.0;

  NormalEquations(int dim, int channels)
      : gram(Eigen::MatrixXd::Zero(dim, dim)),
        cross(Eigen::MatrixXd::Zero(dim, channels)),
        eps_sq(Eigen::VectorXd::Zero(channels)) {}
};

inline void check_pairs(const std::vector<TrainingPair>& pairs, bool conditional) {
  if (pairs.empty()) throw std::invalid_argument("fit_patch_denoiser: no training pairs");
  const Image& ref = pairs.front().clean;
  for (const auto& p : pairs) {
    if (!p.clean.same_shape(ref)) throw std::invalid_argument("training images differ in shape");
    if (conditional) require_same_shape(p.clean, p.degraded, "training pair");
  }
}

// Draws noised samples for one bucket and accumulates the normal equations.
inline NormalEquations accumulate_bucket(const PatchDenoiserModel& model,
                                         const std::vector<TrainingPair>& pairs,
                                         const VarianceSchedule& sched, int bucket,
                                         int samples, int pixels_per_draw, SeededRng& rng) {
  const int dim = model.feature_dim();
  const int channels = model.channels();
  NormalEquations ne(dim, channels);
  const int lo = model.edges()[bucket];
  const int hi = model.edges()[bucket + 1] - 1;
  const Image& ref = pairs.front().clean;
  const int per_draw = std::max(1, std::min<int>(pixels_per_draw, static_cast<int>(ref.plane_size())));

  Eigen::MatrixXd phi(per_draw, dim);
  Eigen::MatrixXd target(per_draw, channels);
  std::vector<double> row(static_cast<std::size_t>(dim));
  int remaining = samples;
  while (remaining > 0) {
    const auto& pair = pairs[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(pairs.size()) - 1))];
    const int t = static_cast<int>(rng.uniform_int(lo, hi));
    const Image eps = rng.normal_like(pair.clean);
    const Image x_t = forward_sample(pair.clean, t, eps, sched);
    const int m = std::min(per_draw, remaining);
    const bool all_pixels = m == static_cast<int>(ref.plane_size());
    for (int i = 0; i < m; ++i) {
      int y, x;
      if (all_pixels) {
        y = i / ref.width();
        x = i % ref.width();
      } else {
        y = static_cast<int>(rng.uniform_int(0, ref.height() - 1));
        x = static_cast<int>(rng.uniform_int(0, ref.width() - 1));
      }
      model.features(x_t, model.conditional() ? &pair.degraded : nullptr, y, x, row);
      for (int j = 0; j < dim; ++j) phi(i, j) = row[static_cast<std::size_t>(j)];
      for (int c = 0; c < channels; ++c) target(i, c) = eps.at(c, y, x);
    }
    const auto p = phi.topRows(m);
    const auto e = target.topRows(m);
    ne.gram.selfadjointView<Eigen::Lower>().rankUpdate(p.transpose());
    ne.cross.noalias() += p.transpose() * e;
    ne.eps_sq += e.colwise().squaredNorm().transpose();
    ne.count += m;
    remaining -= m;
  }
  Eigen::MatrixXd full = ne.gram.selfadjointView<Eigen::Lower>();
  ne.gram = std::move(full);
  return ne;
}

}  // namespace detail

/// Fits eps_hat = W cat(patch(x_t), patch(x_deg)) + b for every time bucket by
/// ridge regression:
///
///   minimize (1/n) sum ||eps - W phi||^2 + lambda ||W||^2
///
/// which is the conditioned denoising loss restricted to this model class.
/// Bucket b draws its samples from sub-stream b of `seed`. With lambda = 0 a
/// singular Gram matrix is an error.
inline PatchDenoiserModel fit_patch_denoiser(const std::vector<TrainingPair>& pairs,
                                             const VarianceSchedule& sched,
                                             const PatchFitConfig& cfg, std::uint64_t seed) {
  detail::check_pairs(pairs, cfg.conditional);
  if (cfg.samples_per_bucket < 1) throw std::invalid_argument("samples_per_bucket must be >= 1");
  if (!(cfg.ridge_lambda >= 0.0)) throw std::invalid_argument("ridge_lambda must be >= 0");
  PatchDenoiserModel model(sched.steps(), schedule_hash(sched), cfg.radius,
                           pairs.front().clean.channels(), cfg.conditional, cfg.ridge_lambda,
                           PatchDenoiserModel::uniform_edges(sched.steps(), cfg.buckets));
  const int dim = model.feature_dim();
  for (int b = 0; b < model.buckets(); ++b) {
    SeededRng rng(substream_seed(seed, static_cast<std::uint64_t>(b)));
    const auto ne = detail::accumulate_bucket(model, pairs, sched, b, cfg.samples_per_bucket,
                                              cfg.pixels_per_draw, rng);
    const Eigen::MatrixXd gram = ne.gram / ne.count;
    const Eigen::MatrixXd cross = ne.cross / ne.count;
    if (cfg.ridge_lambda == 0.0) {
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram, Eigen::EigenvaluesOnly);
      const double top = eig.eigenvalues().maxCoeff();
      if (!(eig.eigenvalues().minCoeff() > 1e-12 * std::max(top, 1e-300))) {
        throw std::runtime_error("fit_patch_denoiser: normal matrix of bucket " +
                                 std::to_string(b) +
                                 " is singular; use a positive ridge_lambda");
      }
    }
    const Eigen::MatrixXd regularized =
        gram + cfg.ridge_lambda * Eigen::MatrixXd::Identity(dim, dim);
    Eigen::LLT<Eigen::MatrixXd> llt(regularized);
    if (llt.info() != Eigen::Success) {
      throw std::runtime_error("fit_patch_denoiser: normal matrix of bucket " +
                               std::to_string(b) + " is not positive definite");
    }
    const Eigen::MatrixXd w = llt.solve(cross);
    double loss = 0.0;
    double baseline = 0.0;
    for (int c = 0; c < model.channels(); ++c) {
      const Eigen::VectorXd wc = w.col(c);
      const double e2 = ne.eps_sq(c) / ne.count;
      loss += e2 - 2.0 * wc.dot(cross.col(c)) + wc.dot(gram * wc);
      baseline += e2;
      auto dst = model.weights(b, c);
      for (int i = 0; i < dim; ++i) dst[static_cast<std::size_t>(i)] = wc(i);
    }
    model.losses()[b] = {loss / model.channels(), baseline / model.channels()};
  }
  return model;
}

/// Held-out per-bucket losses on fresh draws from `seed`.
inline std::vector<BucketLoss> evaluate_patch_denoiser(const PatchDenoiserModel& model,
                                                       const std::vector<TrainingPair>& pairs,
                                                       const VarianceSchedule& sched,
                                                       int samples_per_bucket,
                                                       int pixels_per_draw, std::uint64_t seed) {
  detail::check_pairs(pairs, model.conditional());
  std::vector<BucketLoss> out(static_cast<std::size_t>(model.buckets()));
  for (int b = 0; b < model.buckets(); ++b) {
    SeededRng rng(substream_seed(seed, static_cast<std::uint64_t>(b)));
    const auto ne = detail::accumulate_bucket(model, pairs, sched, b, samples_per_bucket,
                                              pixels_per_draw, rng);
    double loss = 0.0;
    double baseline = 0.0;
    for (int c = 0; c < model.channels(); ++c) {
      const auto wspan = model.weights(b, c);
      const Eigen::Map<const Eigen::VectorXd> wc(wspan.data(), model.feature_dim());
      loss += (ne.eps_sq(c) - 2.0 * wc.dot(ne.cross.col(c)) + wc.dot(ne.gram * wc)) / ne.count;
      baseline += ne.eps_sq(c) / ne.count;
    }
    out[static_cast<std::size_t>(b)] = {loss / model.channels(), baseline / model.channels()};
  }
  return out;
}

}  // namespace tdbfr
