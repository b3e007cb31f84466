#pragma once

// Loss terms of the semi-supervised VAE and the SHOT-VAE training step.
//
// All losses are batch means of per-sample terms. Every stochastic
// expectation uses one reparameterized sample. Random numbers are consumed
// in a fixed order so that a step can be replayed from its seed:
//
//   shot_vae_step: lambda ~ U(0,1); labeled z-noise [B_L x z_dim];
//                  unlabeled z-noise [B_U x z_dim]; unlabeled Gumbel noise [B_U x K].

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "shotvae/data.hpp"
#include "shotvae/distributions.hpp"
#include "shotvae/model.hpp"
#include "shotvae/ops.hpp"
#include "shotvae/rng.hpp"

namespace shotvae {

enum class LossMode { Shot, SmoothOnly, M2, CeOnly };

inline std::string to_string(LossMode m) {
  switch (m) {
    case LossMode::Shot: return "shot";
    case LossMode::SmoothOnly: return "smooth_only";
    case LossMode::M2: return "m2";
    case LossMode::CeOnly: return "ce_only";
  }
  return "?";
}

inline LossMode loss_mode_from_string(const std::string& s) {
  if (s == "shot") return LossMode::Shot;
  if (s == "smooth_only") return LossMode::SmoothOnly;
  if (s == "m2") return LossMode::M2;
  if (s == "ce_only") return LossMode::CeOnly;
  throw DomainError("unknown loss mode '" + s + "' (shot, smooth_only, m2, ce_only)");
}

struct ObjectiveConfig {
  LossMode mode = LossMode::Shot;
  double beta = 0.01;     // weight of KL(q(z|x) || p(z))
  double epsilon = 1e-3;  // label smoothing
  double tau = 0.67;      // Gumbel-softmax temperature
  double alpha = 1.0;     // cross-entropy weight, m2 only
  std::vector<double> prior_y;  // p(y); empty means uniform
  bool ot_target_grad = false;  // let gradients flow into the interpolated target

  Tensor prior_tensor(std::size_t k) const {
    if (prior_y.empty()) return Tensor::full({k}, 1.0 / static_cast<double>(k));
    if (prior_y.size() != k) throw ShapeError("prior over " + std::to_string(prior_y.size()) + " classes, model has " + std::to_string(k));
    return Tensor::vector(prior_y);
  }
};

/// Batch-mean loss components. The optimized quantity is
///   total = -recon + beta * kl_z + kl_y + kl_label_fit + alpha * ce + w_t * ot.
struct LossBreakdown {
  double recon = 0.0;         // E log p(x|z,y)
  double kl_z = 0.0;          // KL(q(z|x) || p(z))
  double kl_y = 0.0;          // KL(q(y|x) || p(y))
  double kl_label_fit = 0.0;  // KL(smooth(1_y) || q(y|x))
  double ce = 0.0;            // -log q(y|x)_y
  double ot = 0.0;            // KL(q(y|x~) || pi~)
  double w_t = 0.0;
  double beta = 0.0;
  double alpha = 0.0;
  double total = 0.0;
  Tensor total_tensor;  // differentiable total

  double weighted_sum() const {
    return -recon + beta * kl_z + kl_y + kl_label_fit + alpha * ce + w_t * ot;
  }
};

struct WarmupSchedule {
  double gamma = 5.0;
  std::size_t t_max = 1;
};

/// w_t = exp(-gamma (1 - t / t_max)^2).
inline double warmup_weight(std::size_t t, const WarmupSchedule& sched) {
  if (sched.t_max == 0) throw DomainError("warm-up t_max must be positive");
  if (!(sched.gamma > 0.0)) throw DomainError("warm-up gamma must be positive");
  if (t > sched.t_max) {
    throw DomainError("warm-up epoch " + std::to_string(t) + " beyond t_max " + std::to_string(sched.t_max));
  }
  const double r = 1.0 - static_cast<double>(t) / static_cast<double>(sched.t_max);
  return std::exp(-sched.gamma * r * r);
}

namespace detail {

/// Accumulates scalar tensors into a LossBreakdown.
class LossBuilder {
 public:
  explicit LossBuilder(LossBreakdown& out) : out_(out) {}

  void add(double& field, const Tensor& term, double weight) {
    field += term.item();
    if (weight == 0.0) return;
    const Tensor w = weight == 1.0 ? term : ops::scale(term, weight);
    total_ = total_.defined() ? ops::add(total_, w) : w;
  }

  void finish() {
    out_.total_tensor = total_.defined() ? total_ : Tensor::scalar(0.0);
    out_.total = out_.total_tensor.item();
  }

 private:
  LossBreakdown& out_;
  Tensor total_;
};

inline void require_batch(const Tensor& x, const char* what) {
  if (!x.defined() || x.rank() != 2 || x.dim(0) == 0) throw DomainError(std::string("empty ") + what + " batch");
}

inline void require_labels(const std::vector<std::size_t>& labels, const Tensor& x, std::size_t k) {
  if (labels.size() != x.dim(0)) throw ShapeError("label count differs from batch size");
  for (auto y : labels) {
    if (y >= k) throw DomainError("label " + std::to_string(y) + " out of range for " + std::to_string(k) + " classes");
  }
}

/// -ELBO_DU terms for an encoded unlabeled batch.
inline void add_unlabeled_elbo(LossBuilder& b, LossBreakdown& out, const Tensor& x, const EncoderOutput& enc,
                               const ModelParams& params, const ObjectiveConfig& cfg, Rng& rng) {
  const Tensor z = sample_gaussian_rt(enc.z_posterior, rng);
  const Tensor y = sample_gumbel_softmax(enc.y_probs, cfg.tau, rng);
  const Tensor recon = ops::mean(recon_log_likelihood(x, decode(z, y, params)));
  const Tensor kl_z = ops::mean(kl_gaussian(enc.z_posterior, DiagGaussian::standard(enc.z_posterior.mu().shape())));
  const Tensor kl_y = ops::mean(kl_categorical_rows(enc.y_probs, cfg.prior_tensor(params.config().num_classes)));
  b.add(out.recon, recon, -1.0);
  b.add(out.kl_z, kl_z, cfg.beta);
  b.add(out.kl_y, kl_y, 1.0);
}

/// -smooth-ELBO terms for an encoded labeled batch. The expectation over
/// y ~ smooth(1_y) in the reconstruction is replaced by its mean.
inline void add_smooth_elbo(LossBuilder& b, LossBreakdown& out, const Tensor& x,
                            const std::vector<std::size_t>& labels, const EncoderOutput& enc,
                            const ModelParams& params, const ObjectiveConfig& cfg, Rng& rng) {
  const std::size_t k = params.config().num_classes;
  const Tensor smoothed = label_matrix(labels, k, cfg.epsilon);
  const Tensor z = sample_gaussian_rt(enc.z_posterior, rng);
  const Tensor recon = ops::mean(recon_log_likelihood(x, decode(z, smoothed, params)));
  const Tensor kl_z = ops::mean(kl_gaussian(enc.z_posterior, DiagGaussian::standard(enc.z_posterior.mu().shape())));
  const Tensor kl_y = ops::mean(kl_categorical_rows(enc.y_probs, cfg.prior_tensor(k)));
  const Tensor fit = ops::mean(kl_categorical_rows(smoothed, enc.y_probs));
  b.add(out.recon, recon, -1.0);
  b.add(out.kl_z, kl_z, cfg.beta);
  b.add(out.kl_y, kl_y, 1.0);
  b.add(out.kl_label_fit, fit, 1.0);
}

/// -ELBO_DL (one-hot y as decoder input) + alpha * CE.
inline void add_m2_labeled(LossBuilder& b, LossBreakdown& out, const Tensor& x, const std::vector<std::size_t>& labels,
                           const EncoderOutput& enc, const ModelParams& params, const ObjectiveConfig& cfg, Rng& rng) {
  const std::size_t k = params.config().num_classes;
  const Tensor z = sample_gaussian_rt(enc.z_posterior, rng);
  const Tensor recon = ops::mean(recon_log_likelihood(x, decode(z, label_matrix(labels, k, 0.0), params)));
  const Tensor kl_z = ops::mean(kl_gaussian(enc.z_posterior, DiagGaussian::standard(enc.z_posterior.mu().shape())));
  const Tensor ce = ops::mean(cross_entropy_rows(enc.y_probs, labels));
  b.add(out.recon, recon, -1.0);
  b.add(out.kl_z, kl_z, cfg.beta);
  b.add(out.ce, ce, cfg.alpha);
}

}  // namespace detail

/// -ELBO_DU on an unlabeled batch.
inline LossBreakdown elbo_unlabeled(const Tensor& x, const ModelParams& params, const ObjectiveConfig& cfg, Rng& rng) {
  detail::require_batch(x, "unlabeled");
  LossBreakdown out;
  out.beta = cfg.beta;
  detail::LossBuilder b(out);
  detail::add_unlabeled_elbo(b, out, x, encode(x, params), params, cfg, rng);
  b.finish();
  return out;
}

/// -smooth-ELBO on a labeled batch.
inline LossBreakdown smooth_elbo_labeled(const Tensor& x, const std::vector<std::size_t>& labels,
                                         const ModelParams& params, const ObjectiveConfig& cfg, Rng& rng) {
  detail::require_batch(x, "labeled");
  detail::require_labels(labels, x, params.config().num_classes);
  SmoothingParams{cfg.epsilon, params.config().num_classes}.validate();
  LossBreakdown out;
  out.beta = cfg.beta;
  detail::LossBuilder b(out);
  detail::add_smooth_elbo(b, out, x, labels, encode(x, params), params, cfg, rng);
  b.finish();
  return out;
}

/// Labeled part of the M2 target: -ELBO_DL + alpha * CE.
inline LossBreakdown m2_objective(const Tensor& x, const std::vector<std::size_t>& labels, const ModelParams& params,
                                  const ObjectiveConfig& cfg, Rng& rng) {
  detail::require_batch(x, "labeled");
  detail::require_labels(labels, x, params.config().num_classes);
  if (cfg.alpha < 0.0) throw DomainError("alpha must be non-negative");
  LossBreakdown out;
  out.beta = cfg.beta;
  out.alpha = cfg.alpha;
  detail::LossBuilder b(out);
  detail::add_m2_labeled(b, out, x, labels, encode(x, params), params, cfg, rng);
  b.finish();
  return out;
}

struct SmoothElboGap {
  double smooth_elbo = 0.0;  // batch mean
  double elbo_dl = 0.0;      // batch mean, ELBO_DL with the smoothed empirical p(y|x)

  double relative_error() const { return std::abs(smooth_elbo - elbo_dl) / std::abs(elbo_dl); }
};

/// smooth-ELBO and ELBO_DL on the same z sample. ELBO_DL here is
/// E log p(x|z,y) - beta KL(q(z|x)||p(z)) - KL(p^||p(y)), p^ = smooth(1_y);
/// smooth-ELBO replaces the last term by KL(q(y|x)||p(y)) + KL(p^||q(y|x)).
inline SmoothElboGap smooth_elbo_gap(const Tensor& x, const std::vector<std::size_t>& labels,
                                     const ModelParams& params, const ObjectiveConfig& cfg, Rng& rng) {
  NoGradGuard no_grad;
  const LossBreakdown s = smooth_elbo_labeled(x, labels, params, cfg, rng);
  const std::size_t k = params.config().num_classes;
  const Tensor smoothed = label_matrix(labels, k, cfg.epsilon);
  const double kl_phat_prior = ops::mean(kl_categorical_rows(smoothed, cfg.prior_tensor(k))).item();
  SmoothElboGap g;
  g.smooth_elbo = -s.total;
  g.elbo_dl = s.recon - cfg.beta * s.kl_z - kl_phat_prior;
  return g;
}

/// KL between two diagonal Gaussians given as raw mean / log-variance arrays.
inline double kl_diag_gaussian(std::span<const double> mu_q, std::span<const double> lv_q,
                               std::span<const double> mu_p, std::span<const double> lv_p) {
  double kl = 0.0;
  for (std::size_t i = 0; i < mu_q.size(); ++i) {
    const double d = mu_q[i] - mu_p[i];
    kl += lv_p[i] - lv_q[i] + (std::exp(lv_q[i]) + d * d) * std::exp(-lv_p[i]) - 1.0;
  }
  return 0.5 * kl;
}

/// For each row i, argmin_{j != i} KL(q_i || q_j); ties go to the lowest j.
inline std::vector<std::size_t> optimal_match(const DiagGaussian& batch) {
  const std::size_t n = batch.batch();
  const std::size_t d = batch.dim();
  if (n < 2) throw DomainError("optimal_match needs a batch of at least 2");
  const auto mu = batch.mu().values();
  const auto lv = batch.log_var().values();
  std::vector<std::size_t> match(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i) continue;
      const double kl = kl_diag_gaussian(mu.subspan(i * d, d), lv.subspan(i * d, d), mu.subspan(j * d, d),
                                         lv.subspan(j * d, d));
      if (kl < best) {
        best = kl;
        match[i] = j;
      }
    }
  }
  return match;
}

inline void require_unit_interval(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw DomainError("lambda " + std::to_string(lambda) + " outside [0, 1]");
}

/// (1 - lambda) x0 + lambda x1.
inline Tensor mixup_inputs(const Tensor& x0, const Tensor& x1, double lambda) {
  require_unit_interval(lambda);
  if (x0.shape() != x1.shape()) {
    throw ShapeError("mixup of " + shape_str(x0.shape()) + " and " + shape_str(x1.shape()));
  }
  return ops::add(ops::scale(x0, 1.0 - lambda), ops::scale(x1, lambda));
}

/// Minimizer over the simplex of (1 - lambda) KL(pi0 || t) + lambda KL(pi1 || t),
/// which is the mixture (1 - lambda) pi0 + lambda pi1.
inline Categorical optimal_interpolation(const Categorical& pi0, const Categorical& pi1, double lambda) {
  require_unit_interval(lambda);
  if (pi0.size() != pi1.size()) throw ShapeError("optimal_interpolation over different class counts");
  std::vector<double> t(pi0.size());
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = (1.0 - lambda) * pi0[i] + lambda * pi1[i];
  return Categorical(std::move(t));
}

/// Row-wise version on probability tensors.
inline Tensor optimal_interpolation(const Tensor& pi0, const Tensor& pi1, double lambda) {
  return mixup_inputs(pi0, pi1, lambda);
}

/// Mean over rows of KL(q(y | x~) || pi~) where x~ mixes x0 and x1 and pi~
/// interpolates their posteriors pi0, pi1 (given as probability tensors).
/// Unless cfg.ot_target_grad, pi~ is a constant for differentiation.
inline Tensor ot_approximation(const Tensor& x0, const Tensor& x1, const Tensor& pi0, const Tensor& pi1,
                               double lambda, const ModelParams& params, const ObjectiveConfig& cfg) {
  const Tensor mixed = mixup_inputs(x0, x1, lambda);
  Tensor target = optimal_interpolation(pi0, pi1, lambda);
  if (!cfg.ot_target_grad) target = target.detach();
  return ops::mean(kl_categorical_rows(encode(mixed, params).y_probs, target));
}

inline Tensor ot_approximation(const Tensor& x0, const Tensor& x1, double lambda, const ModelParams& params,
                               const ObjectiveConfig& cfg) {
  require_unit_interval(lambda);
  return ot_approximation(x0, x1, encode(x0, params).y_probs, encode(x1, params).y_probs, lambda, params, cfg);
}

struct StepConfig {
  ObjectiveConfig objective;
  WarmupSchedule warmup;
};

/// One step of the training objective on a labeled and an unlabeled batch.
///
/// shot:        -smooth-ELBO(D_L) - ELBO_DU(D_U) + w_t OT(D_U, match(D_U), lambda)
/// smooth_only: -smooth-ELBO(D_L) - ELBO_DU(D_U)
/// m2:          -ELBO_DL(D_L) + alpha CE(D_L) - ELBO_DU(D_U)
/// ce_only:     CE(D_L); the unlabeled batch is ignored
///
/// Backpropagate through the returned total_tensor to get parameter gradients.
inline LossBreakdown shot_vae_step(const Batch& labeled, const Batch& unlabeled, std::size_t t,
                                   const StepConfig& config, const ModelParams& params, Rng& rng) {
  const ObjectiveConfig& cfg = config.objective;
  const std::size_t k = params.config().num_classes;
  detail::require_batch(labeled.inputs, "labeled");
  if (!labeled.labels) throw ContractError("labeled batch carries no labels");
  detail::require_labels(*labeled.labels, labeled.inputs, k);

  LossBreakdown out;
  out.beta = cfg.beta;
  const double lambda = rng.uniform();
  detail::LossBuilder b(out);

  const EncoderOutput enc_l = encode(labeled.inputs, params);
  switch (cfg.mode) {
    case LossMode::Shot:
    case LossMode::SmoothOnly:
      SmoothingParams{cfg.epsilon, k}.validate();
      detail::add_smooth_elbo(b, out, labeled.inputs, *labeled.labels, enc_l, params, cfg, rng);
      break;
    case LossMode::M2:
      out.alpha = cfg.alpha;
      detail::add_m2_labeled(b, out, labeled.inputs, *labeled.labels, enc_l, params, cfg, rng);
      break;
    case LossMode::CeOnly:
      out.alpha = 1.0;
      b.add(out.ce, ops::mean(cross_entropy_rows(enc_l.y_probs, *labeled.labels)), 1.0);
      b.finish();
      return out;
  }

  detail::require_batch(unlabeled.inputs, "unlabeled");
  const Tensor& xu = unlabeled.inputs;
  const EncoderOutput enc_u = encode(xu, params);
  detail::add_unlabeled_elbo(b, out, xu, enc_u, params, cfg, rng);

  if (cfg.mode == LossMode::Shot) {
    out.w_t = warmup_weight(t, config.warmup);
    const std::vector<std::size_t> match = optimal_match(enc_u.z_posterior);
    const Tensor x1 = ops::gather_rows(xu, match);
    const Tensor pi1 = ops::gather_rows(enc_u.y_probs, match);
    b.add(out.ot, ot_approximation(xu, x1, enc_u.y_probs, pi1, lambda, params, cfg), out.w_t);
  }
  b.finish();
  return out;
}

}  // namespace shotvae
