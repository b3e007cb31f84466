#pragma once

// Probability objects used by the model and its losses.
//
// Two layers live here. Categorical / SmoothingParams and the free functions
// on them are exact value-level objects with strict contracts; the verifier
// uses them. DiagGaussian and the *_rows helpers act on batched Tensors and
// are what the differentiable losses are built from; those floor
// probabilities at kProbFloor before any log.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "shotvae/errors.hpp"
#include "shotvae/ops.hpp"
#include "shotvae/rng.hpp"
#include "shotvae/tensor.hpp"

namespace shotvae {

inline constexpr double kProbFloor = 1e-12;
inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

// ------------------------------------------------------------- categorical

class Categorical {
 public:
  static constexpr double kSumTolerance = 1e-9;

  explicit Categorical(std::vector<double> probs) : probs_(std::move(probs)) {
    if (probs_.size() < 2) throw DomainError("categorical needs K >= 2 classes");
    double total = 0.0;
    for (double p : probs_) {
      if (!(p >= 0.0) || !std::isfinite(p)) throw DomainError("categorical probability " + std::to_string(p));
      total += p;
    }
    if (std::abs(total - 1.0) > kSumTolerance) {
      throw DomainError("categorical probabilities sum to " + std::to_string(total));
    }
  }

  static Categorical uniform(std::size_t k) {
    return Categorical(std::vector<double>(k, 1.0 / static_cast<double>(k)));
  }

  std::size_t size() const noexcept { return probs_.size(); }
  std::span<const double> probs() const noexcept { return probs_; }
  double operator[](std::size_t i) const { return probs_[i]; }
  std::size_t argmax() const {
    return static_cast<std::size_t>(std::max_element(probs_.begin(), probs_.end()) - probs_.begin());
  }
  Tensor tensor() const { return Tensor::vector(probs_); }

 private:
  std::vector<double> probs_;
};

struct SmoothingParams {
  double epsilon = 1e-3;
  std::size_t num_classes = 10;

  void validate() const {
    if (num_classes < 2) throw DomainError("label smoothing needs K >= 2");
    const double k = static_cast<double>(num_classes);
    if (!(epsilon > 0.0) || !(epsilon < (k - 1.0) / k)) {
      throw DomainError("smoothing epsilon " + std::to_string(epsilon) + " outside (0, (K-1)/K)");
    }
  }
};

/// Smoothed one-hot: 1 - eps at y, eps / (K - 1) elsewhere.
inline std::vector<double> smooth_label_values(std::size_t y, double epsilon, std::size_t k) {
  if (y >= k) {
    throw DomainError("label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
  }
  std::vector<double> p(k, epsilon / static_cast<double>(k - 1));
  p[y] = 1.0 - epsilon;
  return p;
}

inline Categorical smooth_label(std::size_t y, const SmoothingParams& params) {
  params.validate();
  return Categorical(smooth_label_values(y, params.epsilon, params.num_classes));
}

/// KL(q || p) with 0 log 0 = 0. Throws if q puts mass where p has none.
inline double kl_categorical(const Categorical& q, const Categorical& p) {
  if (q.size() != p.size()) {
    throw ShapeError("kl_categorical over " + std::to_string(q.size()) + " vs " + std::to_string(p.size()) +
                     " classes");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] == 0.0) continue;
    if (p[i] == 0.0) {
      throw InfiniteDivergenceError("KL is infinite: q[" + std::to_string(i) + "] > 0 but p[" +
                                    std::to_string(i) + "] = 0");
    }
    kl += q[i] * (std::log(q[i]) - std::log(p[i]));
  }
  return kl;
}

struct PinskerResult {
  double max_abs_diff = 0.0;
  double bound = 0.0;
  bool holds() const noexcept { return max_abs_diff <= bound; }
};

/// Largest per-class gap between p and q against sqrt(KL(p || q) / 2).
inline PinskerResult pinsker_bound(const Categorical& q, const Categorical& p) {
  const double kl = kl_categorical(p, q);
  PinskerResult r;
  for (std::size_t i = 0; i < q.size(); ++i) r.max_abs_diff = std::max(r.max_abs_diff, std::abs(p[i] - q[i]));
  r.bound = std::sqrt(0.5 * std::max(kl, 0.0));
  return r;
}

// ----------------------------------------------------------- diag gaussian

/// N(mu, diag(exp(log_var))). Rows are independent distributions.
class DiagGaussian {
 public:
  DiagGaussian(Tensor mu, const Tensor& log_var)
      : mu_(std::move(mu)), log_var_(ops::clamp(log_var, kLogVarMin, kLogVarMax)) {
    if (mu_.shape() != log_var_.shape()) {
      throw ShapeError("gaussian mean " + shape_str(mu_.shape()) + " vs log-variance " +
                       shape_str(log_var_.shape()));
    }
  }

  static DiagGaussian standard(const Shape& shape) { return {Tensor::zeros(shape), Tensor::zeros(shape)}; }

  const Tensor& mu() const noexcept { return mu_; }
  const Tensor& log_var() const noexcept { return log_var_; }
  std::size_t dim() const { return mu_.cols(); }
  std::size_t batch() const { return mu_.size() / mu_.cols(); }

 private:
  Tensor mu_;
  Tensor log_var_;
};

/// KL(q || p) summed over the last dimension (one value per row).
inline Tensor kl_gaussian(const DiagGaussian& q, const DiagGaussian& p) {
  if (q.dim() != p.dim()) {
    throw ShapeError("kl_gaussian dimension mismatch: " + shape_str(q.mu().shape()) + " vs " +
                     shape_str(p.mu().shape()));
  }
  using namespace ops;
  const Tensor var_q = exp(q.log_var());
  const Tensor inv_var_p = exp(neg(p.log_var()));
  const Tensor diff = sub(q.mu(), p.mu());
  const Tensor terms = add_scalar(sub(p.log_var(), q.log_var()) + (var_q + square(diff)) * inv_var_p, -1.0);
  return scale(sum_last(terms), 0.5);
}

/// z = mu + exp(log_var / 2) * n with n ~ N(0, I), drawn row-major.
inline Tensor sample_gaussian_rt(const DiagGaussian& q, Rng& rng) {
  std::vector<double> noise(q.mu().size());
  for (auto& n : noise) n = rng.normal();
  const Tensor eps(q.mu().shape(), std::move(noise));
  return ops::add(q.mu(), ops::mul(ops::exp(ops::scale(q.log_var(), 0.5)), eps));
}

/// Softmax((log pi + g) / tau), g ~ Gumbel(0, 1) drawn row-major; pi is
/// floored at kProbFloor before the log. Rows of `probs` are distributions.
inline Tensor sample_gumbel_softmax(const Tensor& probs, double tau, Rng& rng) {
  if (!(tau > 0.0)) throw DomainError("gumbel-softmax temperature must be positive, got " + std::to_string(tau));
  std::vector<double> noise(probs.size());
  for (auto& g : noise) g = rng.gumbel();
  const Tensor gumbel(probs.shape(), std::move(noise));
  const Tensor logits = ops::add(ops::log(ops::clamp_min(probs, kProbFloor)), gumbel);
  return ops::softmax(ops::scale(logits, 1.0 / tau));
}

inline std::vector<double> sample_gumbel_softmax(const Categorical& pi, double tau, Rng& rng) {
  return sample_gumbel_softmax(pi.tensor(), tau, rng).to_vector();
}

/// Row-wise KL(q || p) for probability tensors, both floored at kProbFloor.
/// `p` may be a single distribution broadcast over the rows of `q`.
inline Tensor kl_categorical_rows(const Tensor& q, const Tensor& p) {
  using namespace ops;
  const Tensor log_q = log(clamp_min(q, kProbFloor));
  const Tensor log_p = log(clamp_min(p, kProbFloor));
  return sum_last(mul(q, sub(log_q, log_p)));
}

/// Row-wise cross-entropy -log q[label], q floored at kProbFloor.
inline Tensor cross_entropy_rows(const Tensor& q, const std::vector<std::size_t>& labels) {
  const std::size_t k = q.cols();
  std::vector<double> onehot(q.size(), 0.0);
  if (labels.size() != q.rows()) throw ShapeError("cross_entropy: label count differs from batch");
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= k) throw DomainError("label " + std::to_string(labels[r]) + " out of range");
    onehot[r * k + labels[r]] = 1.0;
  }
  const Tensor target(q.shape(), std::move(onehot));
  return ops::neg(ops::sum_last(ops::mul(target, ops::log(ops::clamp_min(q, kProbFloor)))));
}

}  // namespace shotvae
