#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "reference_model.hpp"
#include "shotvae/model.hpp"

using namespace shotvae;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.input_dim = 6;
  c.num_classes = 3;
  c.z_dim = 2;
  c.hidden = 5;
  return c;
}

Tensor random_inputs(std::size_t n, std::size_t d, Rng& rng) {
  std::vector<double> v(n * d);
  for (auto& x : v) x = rng.uniform();
  return Tensor({n, d}, std::move(v));
}

void zero_fill(Tensor& t) {
  for (auto& v : t.mutable_values()) v = 0.0;
}

}  // namespace

TEST(Init, LayerShapesAndGradFlags) {
  Rng rng(0);
  const ModelParams p = init_params(small_config(), rng);
  EXPECT_EQ(p.at("enc.fc1.weight").shape(), (Shape{6, 5}));
  EXPECT_EQ(p.at("enc.z_head.weight").shape(), (Shape{5, 4}));
  EXPECT_EQ(p.at("enc.y_head.bias").shape(), (Shape{3}));
  EXPECT_EQ(p.at("dec.fc1.weight").shape(), (Shape{5, 5}));
  EXPECT_EQ(p.at("dec.out.weight").shape(), (Shape{5, 6}));
  for (const auto& [name, t] : p.entries()) EXPECT_TRUE(t.requires_grad()) << name;
  // 4 linear layers per side plus the two encoder heads.
  EXPECT_EQ(p.entries().size(), 2u * 9u);
}

TEST(Init, DeterministicPerSeed) {
  Rng a(3), b(3), c(4);
  const ModelParams pa = init_params(small_config(), a);
  const ModelParams pb = init_params(small_config(), b);
  const ModelParams pc = init_params(small_config(), c);
  EXPECT_EQ(pa.at("enc.fc2.weight").to_vector(), pb.at("enc.fc2.weight").to_vector());
  EXPECT_NE(pa.at("enc.fc2.weight").to_vector(), pc.at("enc.fc2.weight").to_vector());
}

TEST(Encode, PosteriorSumsToOne) {
  Rng rng(1);
  const ModelParams p = init_params(small_config(), rng);
  const Tensor probs = encode(random_inputs(7, 6, rng), p).y_probs;
  for (std::size_t r = 0; r < 7; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 3; ++c) s += probs.at(r, c);
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Encode, ZeroYHeadIsUniform) {
  Rng rng(1);
  ModelParams p = init_params(small_config(), rng);
  zero_fill(p.at("enc.y_head.weight"));
  zero_fill(p.at("enc.y_head.bias"));
  const Tensor probs = encode(random_inputs(4, 6, rng), p).y_probs;
  for (double v : probs.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Encode, IdenticalRowsGiveIdenticalOutputs) {
  Rng rng(2);
  const ModelParams p = init_params(small_config(), rng);
  const Tensor x = random_inputs(1, 6, rng);
  std::vector<double> twice = x.to_vector();
  twice.insert(twice.end(), twice.begin(), twice.end());
  const auto out = encode(Tensor({2, 6}, twice), p);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.y_probs.at(0, c), out.y_probs.at(1, c));
  for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(out.z_posterior.mu().at(0, c), out.z_posterior.mu().at(1, c));
}

TEST(Encode, ShapeMismatch) {
  Rng rng(2);
  const ModelParams p = init_params(small_config(), rng);
  EXPECT_THROW(encode(Tensor::zeros({2, 5}), p), ShapeError);
}

TEST(Encode, MatchesPlainReference) {
  Rng rng(12);
  const ModelParams p = init_params(small_config(), rng);
  const Tensor x = random_inputs(5, 6, rng);
  const auto out = encode(x, p);
  const ref::Enc r = ref::encode(ref::from(x), p);
  for (std::size_t i = 0; i < 15; ++i) EXPECT_NEAR(out.y_probs[i], r.probs.v[i], 1e-12);
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_NEAR(out.z_posterior.mu()[i], r.mu.v[i], 1e-12);
    EXPECT_NEAR(out.z_posterior.log_var()[i], r.lv.v[i], 1e-12);
  }
}

TEST(Encode, PermutingYHeadPermutesPosterior) {
  Rng rng(13);
  ModelParams p = init_params(small_config(), rng);
  const Tensor x = random_inputs(4, 6, rng);
  const Tensor before = encode(x, p).y_probs;
  // Weights are [in, out]; class c is column c. Rotate columns by one.
  const std::vector<std::size_t> perm = {2, 0, 1};
  Tensor& w = p.at("enc.y_head.weight");
  Tensor& b = p.at("enc.y_head.bias");
  const auto w0 = w.to_vector();
  const auto b0 = b.to_vector();
  for (std::size_t r = 0; r < w.dim(0); ++r)
    for (std::size_t c = 0; c < 3; ++c) w.mutable_values()[r * 3 + c] = w0[r * 3 + perm[c]];
  for (std::size_t c = 0; c < 3; ++c) b.mutable_values()[c] = b0[perm[c]];
  const Tensor after = encode(x, p).y_probs;
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) EXPECT_NEAR(after.at(r, c), before.at(r, perm[c]), 1e-15);
}

TEST(Decode, ZeroFinalLayerGivesSigmoidBias) {
  Rng rng(4);
  ModelParams p = init_params(small_config(), rng);
  zero_fill(p.at("dec.out.weight"));
  auto bias = p.at("dec.out.bias").mutable_values();
  for (std::size_t i = 0; i < bias.size(); ++i) bias[i] = 0.5 * static_cast<double>(i) - 1.0;
  const Tensor z = random_inputs(3, 2, rng);
  const Tensor y = Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0.2, 0.3, 0.5}});
  const Tensor mean = decode(z, y, p).mean;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 6; ++c) EXPECT_DOUBLE_EQ(mean.at(r, c), 1.0 / (1.0 + std::exp(-(0.5 * c - 1.0))));
}

TEST(Decode, OutputsInOpenUnitInterval) {
  Rng rng(5);
  const ModelParams p = init_params(small_config(), rng);
  std::vector<double> z(40 * 2);
  for (auto& v : z) v = 3.0 * rng.normal();
  const Tensor y = label_matrix(std::vector<std::size_t>(40, 1), 3, 1e-3);
  const Tensor mean = decode(Tensor({40, 2}, z), y, p).mean;
  for (double v : mean.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Decode, ShapeMismatch) {
  Rng rng(5);
  const ModelParams p = init_params(small_config(), rng);
  EXPECT_THROW(decode(Tensor::zeros({2, 3}), Tensor::zeros({2, 3}), p), ShapeError);
  EXPECT_THROW(decode(Tensor::zeros({2, 2}), Tensor::zeros({2, 4}), p), ShapeError);
}

TEST(Decode, EncodeSampleDecodeGradient) {
  ModelConfig cfg = small_config();
  Rng init(6);
  ModelParams p = init_params(cfg, init);
  Rng data(7);
  const Tensor x = random_inputs(2, 6, data);
  const Tensor y = label_matrix({0, 2}, 3, 1e-3);
  auto loss = [&] {
    Rng rng(99);
    const auto enc = encode(x, p);
    const Tensor z = sample_gaussian_rt(enc.z_posterior, rng);
    return ops::mean(recon_log_likelihood(x, decode(z, y, p)));
  };
  p.zero_grad();
  backward(loss());
  const double h = 1e-5;
  for (auto& [name, t] : p.entries()) {
    if (name.rfind("enc.y_head", 0) == 0) continue;  // not on this path
    const std::vector<double> g(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t.mutable_values()[i] = orig + h;
      const double up = loss().item();
      t.mutable_values()[i] = orig - h;
      const double down = loss().item();
      t.mutable_values()[i] = orig;
      const double fd = (up - down) / (2 * h);
      EXPECT_NEAR(g[i], fd, 1e-4 * std::max({std::abs(fd), std::abs(g[i]), 1e-6})) << name << "[" << i << "]";
    }
  }
}

TEST(Recon, ZeroResidual) {
  const Tensor x = Tensor::matrix({{0.1, 0.2, 0.3, 0.4}});
  EXPECT_EQ(recon_log_likelihood(x, DecoderLikelihood{x, 1.0}).item(), 0.0);
}

TEST(Recon, UnitResidual) {
  const Tensor mean = Tensor::matrix({{0.1, 0.2, 0.3, 0.4}});
  const Tensor x = ops::add_scalar(mean, 1.0);
  EXPECT_DOUBLE_EQ(recon_log_likelihood(x, DecoderLikelihood{mean, 1.0}).item(), -2.0);
}

TEST(Recon, GradientWrtMean) {
  const double var = 0.5;
  Tensor mean = Tensor::matrix({{0.1, 0.9, 0.3}}, true);
  const Tensor x = Tensor::matrix({{0.4, 0.2, 0.3}});
  backward(ops::sum(recon_log_likelihood(x, DecoderLikelihood{mean, var})));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(mean.grad()[i], (x[i] - mean[i]) / var, 1e-15);
}

TEST(Recon, ShapeMismatch) {
  EXPECT_THROW(recon_log_likelihood(Tensor::zeros({1, 3}), DecoderLikelihood{Tensor::zeros({1, 4}), 1.0}),
               ShapeError);
}

TEST(ConditionalGenerate, RangeDeterminismAndClassCheck) {
  Rng init(8);
  const ModelParams p = init_params(small_config(), init);
  Rng data(9);
  const Tensor x = random_inputs(3, 6, data);
  Rng a(10), b(10);
  const Tensor ga = conditional_generate(x, 2, p, 1e-3, a);
  const Tensor gb = conditional_generate(x, 2, p, 1e-3, b);
  EXPECT_EQ(ga.to_vector(), gb.to_vector());
  for (double v : ga.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  Rng c(10);
  EXPECT_THROW(conditional_generate(x, 3, p, 1e-3, c), DomainError);
}

TEST(ConditionalGenerate, DecodesStyleWithSmoothedTarget) {
  Rng init(8);
  const ModelParams p = init_params(small_config(), init);
  Rng data(9);
  const Tensor x = random_inputs(2, 6, data);
  Rng a(10), b(10);
  const Tensor g = conditional_generate(x, 1, p, 1e-3, a);
  const ref::Enc e = ref::encode(ref::from(x), p);
  const ref::Mat z = ref::gaussian_sample(e, b);
  ref::Mat y(2, 3);
  for (std::size_t r = 0; r < 2; ++r) {
    const auto s = ref::smooth(1, 1e-3, 3);
    for (std::size_t c = 0; c < 3; ++c) y(r, c) = s[c];
  }
  const ref::Mat mean = ref::decode(z, y, p);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], mean.v[i], 1e-12);
}

TEST(Predict, ArgmaxOfPosterior) {
  Rng init(14);
  ModelParams p = init_params(small_config(), init);
  zero_fill(p.at("enc.y_head.weight"));
  auto b = p.at("enc.y_head.bias").mutable_values();
  b[0] = 0.0;
  b[1] = 2.0;
  b[2] = 1.0;
  Rng data(1);
  for (auto c : predict(random_inputs(5, 6, data), p)) EXPECT_EQ(c, 1u);
}
