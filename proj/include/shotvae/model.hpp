#pragma once

// The semi-supervised VAE network.
//
//   encoder: x -> relu(fc1) -> relu(fc2) -> relu(fc3) -+-> z_head -> (mu, log_var)
//                                                       +-> y_head -> softmax -> pi
//   decoder: concat(z, y) -> relu(fc1) -> relu(fc2) -> relu(fc3) -> sigmoid(out)
//
// Both sides are 4-layer MLPs. The likelihood is N(x; decoder(z, y), sigma^2 I)
// with a fixed, configured sigma^2.

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "shotvae/distributions.hpp"
#include "shotvae/ops.hpp"
#include "shotvae/rng.hpp"
#include "shotvae/tensor.hpp"

namespace shotvae {

struct ModelConfig {
  std::size_t input_dim = 784;
  std::size_t num_classes = 10;
  std::size_t z_dim = 10;
  std::size_t hidden = 256;
  double decoder_var = 1.0;

  void validate() const {
    if (input_dim == 0 || z_dim == 0 || hidden == 0) throw DomainError("model dimensions must be positive");
    if (num_classes < 2) throw DomainError("model needs at least 2 classes");
    if (!(decoder_var > 0.0)) throw DomainError("decoder variance must be positive");
  }
};

/// Named parameter tensors, kept in registration order.
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(ModelConfig config) : config_(config) {}

  const ModelConfig& config() const noexcept { return config_; }

  void add(const std::string& name, Tensor t) {
    if (index_.count(name)) throw ContractError("duplicate parameter " + name);
    index_[name] = entries_.size();
    entries_.emplace_back(name, std::move(t));
  }

  Tensor& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("no parameter named " + name);
    return entries_[it->second].second;
  }
  const Tensor& at(const std::string& name) const { return const_cast<ModelParams*>(this)->at(name); }
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<std::pair<std::string, Tensor>>& entries() noexcept { return entries_; }
  const std::vector<std::pair<std::string, Tensor>>& entries() const noexcept { return entries_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : entries_) n += t.size();
    return n;
  }

  void zero_grad() {
    for (auto& [_, t] : entries_) t.zero_grad();
  }

  /// Deep copy with fresh leaf tensors.
  ModelParams clone() const {
    ModelParams out(config_);
    for (const auto& [name, t] : entries_) out.add(name, t.clone());
    return out;
  }

 private:
  ModelConfig config_;
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

namespace detail {

inline Tensor uniform_init(std::size_t fan_in, std::size_t fan_out, double limit, Rng& rng) {
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = rng.uniform(-limit, limit);
  return Tensor({fan_in, fan_out}, std::move(w), true);
}

inline void add_linear(ModelParams& p, const std::string& name, std::size_t in, std::size_t out, bool relu,
                       Rng& rng) {
  // He-uniform for ReLU layers, Glorot-uniform for heads and the output.
  const double limit = relu ? std::sqrt(6.0 / static_cast<double>(in))
                            : std::sqrt(6.0 / static_cast<double>(in + out));
  p.add(name + ".weight", uniform_init(in, out, limit, rng));
  p.add(name + ".bias", Tensor::zeros({out}, true));
}

inline Tensor linear(const Tensor& x, const ModelParams& p, const std::string& name) {
  return ops::add(ops::matmul(x, p.at(name + ".weight")), p.at(name + ".bias"));
}

}  // namespace detail

inline ModelParams init_params(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  ModelParams p(cfg);
  const std::size_t h = cfg.hidden;
  detail::add_linear(p, "enc.fc1", cfg.input_dim, h, true, rng);
  detail::add_linear(p, "enc.fc2", h, h, true, rng);
  detail::add_linear(p, "enc.fc3", h, h, true, rng);
  detail::add_linear(p, "enc.z_head", h, 2 * cfg.z_dim, false, rng);
  detail::add_linear(p, "enc.y_head", h, cfg.num_classes, false, rng);
  detail::add_linear(p, "dec.fc1", cfg.z_dim + cfg.num_classes, h, true, rng);
  detail::add_linear(p, "dec.fc2", h, h, true, rng);
  detail::add_linear(p, "dec.fc3", h, h, true, rng);
  detail::add_linear(p, "dec.out", h, cfg.input_dim, false, rng);
  return p;
}

struct EncoderOutput {
  DiagGaussian z_posterior;
  Tensor y_logits;  // [B, K]
  Tensor y_probs;   // [B, K], rows sum to 1
};

struct DecoderLikelihood {
  Tensor mean;  // [B, input_dim], entries in (0, 1)
  double fixed_var = 1.0;
};

/// q(z|x) and q(y|x) for a batch x of shape [B, input_dim].
inline EncoderOutput encode(const Tensor& x, const ModelParams& params) {
  const auto& cfg = params.config();
  if (x.rank() != 2 || x.dim(1) != cfg.input_dim) {
    throw ShapeError("encode expects [B, " + std::to_string(cfg.input_dim) + "], got " + shape_str(x.shape()));
  }
  using detail::linear;
  Tensor h = ops::relu(linear(x, params, "enc.fc1"));
  h = ops::relu(linear(h, params, "enc.fc2"));
  h = ops::relu(linear(h, params, "enc.fc3"));
  const Tensor zh = linear(h, params, "enc.z_head");
  Tensor logits = linear(h, params, "enc.y_head");
  Tensor probs = ops::softmax(logits);
  return EncoderOutput{
      DiagGaussian(ops::slice_cols(zh, 0, cfg.z_dim), ops::slice_cols(zh, cfg.z_dim, 2 * cfg.z_dim)),
      std::move(logits), std::move(probs)};
}

/// Mean of p(x | z, y); y rows are probability vectors (soft or smoothed).
inline DecoderLikelihood decode(const Tensor& z, const Tensor& y, const ModelParams& params) {
  const auto& cfg = params.config();
  if (z.rank() != 2 || z.dim(1) != cfg.z_dim) {
    throw ShapeError("decode expects z of [B, " + std::to_string(cfg.z_dim) + "], got " + shape_str(z.shape()));
  }
  if (y.rank() != 2 || y.dim(1) != cfg.num_classes || y.dim(0) != z.dim(0)) {
    throw ShapeError("decode expects y of [" + std::to_string(z.dim(0)) + ", " + std::to_string(cfg.num_classes) +
                     "], got " + shape_str(y.shape()));
  }
  using detail::linear;
  Tensor h = ops::relu(linear(ops::concat_cols(z, y), params, "dec.fc1"));
  h = ops::relu(linear(h, params, "dec.fc2"));
  h = ops::relu(linear(h, params, "dec.fc3"));
  return DecoderLikelihood{ops::sigmoid(linear(h, params, "dec.out")), cfg.decoder_var};
}

/// -||x - mean||^2 / (2 sigma^2) per row. The Gaussian normalizer
/// -D/2 log(2 pi sigma^2) is a constant and is dropped.
inline Tensor recon_log_likelihood(const Tensor& x, const DecoderLikelihood& lik) {
  if (x.shape() != lik.mean.shape()) {
    throw ShapeError("reconstruction target " + shape_str(x.shape()) + " vs mean " + shape_str(lik.mean.shape()));
  }
  return ops::scale(ops::sum_last(ops::square(ops::sub(x, lik.mean))), -0.5 / lik.fixed_var);
}

/// Rows of smooth(1_y) for a batch of labels (epsilon = 0 gives one-hot).
inline Tensor label_matrix(const std::vector<std::size_t>& labels, std::size_t k, double epsilon) {
  std::vector<double> flat;
  flat.reserve(labels.size() * k);
  for (auto y : labels) {
    if (epsilon == 0.0) {
      if (y >= k) throw DomainError("label " + std::to_string(y) + " out of range");
      std::vector<double> row(k, 0.0);
      row[y] = 1.0;
      flat.insert(flat.end(), row.begin(), row.end());
    } else {
      const auto row = smooth_label_values(y, epsilon, k);
      flat.insert(flat.end(), row.begin(), row.end());
    }
  }
  return Tensor({labels.size(), k}, std::move(flat));
}

/// Keep the style z ~ q(z|x), swap the class for `target_class`.
inline Tensor conditional_generate(const Tensor& x, std::size_t target_class, const ModelParams& params,
                                   double epsilon, Rng& rng) {
  const auto& cfg = params.config();
  if (target_class >= cfg.num_classes) {
    throw DomainError("class " + std::to_string(target_class) + " out of range for " +
                      std::to_string(cfg.num_classes) + " classes");
  }
  NoGradGuard no_grad;
  const EncoderOutput enc = encode(x, params);
  const Tensor z = sample_gaussian_rt(enc.z_posterior, rng);
  const std::vector<std::size_t> labels(x.dim(0), target_class);
  return decode(z, label_matrix(labels, cfg.num_classes, epsilon), params).mean;
}

/// Argmax of q(y|x) per row; ties go to the lowest index.
inline std::vector<std::size_t> predict(const Tensor& x, const ModelParams& params) {
  NoGradGuard no_grad;
  const Tensor probs = encode(x, params).y_probs;
  const std::size_t k = probs.cols();
  std::vector<std::size_t> out(probs.rows());
  for (std::size_t r = 0; r < out.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (probs.at(r, j) > probs.at(r, best)) best = j;
    out[r] = best;
  }
  return out;
}

}  // namespace shotvae
