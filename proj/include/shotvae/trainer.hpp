#pragma once

// Training loop, evaluation and the on-disk run layout.
//
// A run directory holds:
//   config.txt           the effective configuration
//   data_manifest.json   how to rebuild the train/test data and the split
//   metrics.jsonl        one JSON object per epoch (bit-reproducible)
//   timings.jsonl        wall-clock seconds per epoch (not reproducible)
//   epoch_<t>.ckpt       at each LR milestone
//   final.ckpt
//
// Epochs are numbered 1..t_max and the warm-up weight of epoch t is w_t.
// Each epoch runs `steps` optimizer steps, by default one per unlabeled
// batch. Labeled batches come from an independent, endlessly reshuffled
// stream. Step i of epoch t draws its randomness from Rng(seed.sample, t).derive(i).

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "shotvae/checkpoint.hpp"
#include "shotvae/config.hpp"
#include "shotvae/data.hpp"
#include "shotvae/distributions.hpp"
#include "shotvae/model.hpp"
#include "shotvae/objectives.hpp"

namespace shotvae {

// --------------------------------------------------------------------- data

struct TrainData {
  Dataset train;  // D_L and D_U together, before the split
  SplitResult split;
  Dataset test;   // may be empty
  nlohmann::json manifest;
};

inline TrainData load_train_data(const TrainConfig& cfg) {
  TrainData d;
  nlohmann::json m;
  if (cfg.data_source == "synth") {
    // Train and test come from one generator run; rows are round-robin over
    // classes, so the first per_class * K rows hold per_class of each class.
    SynthSpec spec = cfg.synth;
    const std::size_t k = spec.num_classes;
    spec.per_class += cfg.synth_test_per_class;
    const Dataset all = synth_generate(spec);
    std::vector<std::size_t> tr(cfg.synth.per_class * k), te(cfg.synth_test_per_class * k);
    for (std::size_t i = 0; i < tr.size(); ++i) tr[i] = i;
    for (std::size_t i = 0; i < te.size(); ++i) te[i] = tr.size() + i;
    d.train = all.subset(tr);
    d.test = all.subset(te);
    m["source"] = "synth";
    m["synth"] = to_json(cfg.synth);
    m["test_per_class"] = cfg.synth_test_per_class;
  } else {
    d.train = load_idx(cfg.train_images, cfg.train_labels);
    if (!cfg.test_images.empty()) d.test = load_idx(cfg.test_images, cfg.test_labels, d.train.num_classes);
    m["source"] = "idx";
    m["train_images"] = std::filesystem::absolute(cfg.train_images).string();
    m["train_labels"] = std::filesystem::absolute(cfg.train_labels).string();
    if (!cfg.test_images.empty()) {
      m["test_images"] = std::filesystem::absolute(cfg.test_images).string();
      m["test_labels"] = std::filesystem::absolute(cfg.test_labels).string();
    }
  }
  d.split = split(d.train, SplitSpec{cfg.labeled, cfg.seed_split, cfg.stratified});
  m["split"] = {{"labeled", cfg.labeled}, {"seed", cfg.seed_split}, {"stratified", cfg.stratified}};
  d.manifest = std::move(m);
  return d;
}

/// Rebuilds one part ("test", "labeled", "unlabeled", "all") from a data manifest.
inline Dataset load_manifest_part(const nlohmann::json& m, const std::string& part) {
  TrainConfig cfg;
  const std::string source = m.at("source").get<std::string>();
  cfg.data_source = source;
  if (source == "synth") {
    cfg.synth = synth_spec_from_json(m.at("synth"));
    cfg.synth_test_per_class = m.value("test_per_class", std::size_t{0});
  } else if (source == "idx") {
    cfg.train_images = m.at("train_images").get<std::string>();
    cfg.train_labels = m.at("train_labels").get<std::string>();
    cfg.test_images = m.value("test_images", std::string{});
    cfg.test_labels = m.value("test_labels", std::string{});
  } else {
    throw IoError("data manifest has unknown source '" + source + "'");
  }
  const auto& s = m.at("split");
  cfg.labeled = s.at("labeled").get<std::size_t>();
  cfg.seed_split = s.at("seed").get<std::uint64_t>();
  cfg.stratified = s.at("stratified").get<bool>();
  TrainData d = load_train_data(cfg);
  if (part == "test") return d.test;
  if (part == "labeled") return d.split.labeled;
  if (part == "unlabeled") return d.split.unlabeled.as_dataset_for_export();
  if (part == "all") return d.train;
  throw DomainError("unknown data part '" + part + "' (test, labeled, unlabeled, all)");
}

// ----------------------------------------------------------------- optimizer

/// v <- m v + g;  p <- p - lr v.
class SgdMomentum {
 public:
  explicit SgdMomentum(double momentum) : momentum_(momentum) {}

  void step(ModelParams& params, double lr) {
    for (auto& [name, p] : params.entries()) {
      if (!p.has_grad()) continue;
      auto& v = velocity_[name];
      const auto g = p.grad();
      if (v.empty()) v.assign(g.size(), 0.0);
      auto w = p.mutable_values();
      for (std::size_t i = 0; i < g.size(); ++i) {
        v[i] = momentum_ * v[i] + g[i];
        w[i] -= lr * v[i];
      }
    }
  }

  std::map<std::string, Tensor> state(const ModelParams& params) const {
    std::map<std::string, Tensor> out;
    for (const auto& [name, v] : velocity_) out.emplace(name, Tensor(params.at(name).shape(), v));
    return out;
  }

  void load(const std::map<std::string, Tensor>& state) {
    velocity_.clear();
    for (const auto& [name, t] : state) velocity_[name] = t.to_vector();
  }

 private:
  double momentum_;
  std::map<std::string, std::vector<double>> velocity_;
};

/// LR for epoch t: base * factor^(number of milestones m with m < t).
inline double lr_at_epoch(double base, const std::vector<std::size_t>& milestones, double factor, std::size_t t) {
  double lr = base;
  for (auto m : milestones)
    if (m < t) lr *= factor;
  return lr;
}

// ---------------------------------------------------------------- evaluation

inline constexpr std::size_t kEvalChunk = 1024;

/// q(y|x) for every row, computed in chunks without recording gradients.
inline std::vector<double> posterior_probs(const Dataset& ds, const ModelParams& params) {
  NoGradGuard no_grad;
  std::vector<double> out;
  out.reserve(ds.size() * params.config().num_classes);
  for (std::size_t lo = 0; lo < ds.size(); lo += kEvalChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = lo; i < std::min(ds.size(), lo + kEvalChunk); ++i) idx.push_back(i);
    const Tensor p = encode(ds.rows_tensor(idx), params).y_probs;
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return out;
}

/// Fraction of rows whose argmax q(y|x) differs from the label; ties go low.
inline double error_rate(const Dataset& ds, const ModelParams& params) {
  if (ds.empty()) return std::numeric_limits<double>::quiet_NaN();
  if (ds.input_dim != params.config().input_dim) {
    throw ShapeError("dataset input_dim " + std::to_string(ds.input_dim) + " vs model " +
                     std::to_string(params.config().input_dim));
  }
  const std::size_t k = params.config().num_classes;
  const auto probs = posterior_probs(ds, params);
  std::size_t wrong = 0;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j)
      if (probs[r * k + j] > probs[r * k + best]) best = j;
    if (best != ds.labels[r]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(ds.size());
}

inline double evaluate(const std::string& checkpoint_path, const Dataset& ds) {
  return error_rate(ds, load_checkpoint(checkpoint_path).params);
}

/// Mean over D_U of KL(q(y|x) || smooth(1_y)). Reads the firewalled labels.
inline double diag_kl_qy_vs_phat(const UnlabeledSet& du, const ModelParams& params, double epsilon) {
  if (du.empty()) return std::numeric_limits<double>::quiet_NaN();
  const std::size_t k = params.config().num_classes;
  const auto probs = posterior_probs(du.as_dataset_for_export(), params);
  const auto& truth = du.diagnostic_labels();
  double total = 0.0;
  for (std::size_t r = 0; r < du.size(); ++r) {
    const auto h = smooth_label_values(truth[r], epsilon, k);
    for (std::size_t j = 0; j < k; ++j) {
      const double q = std::max(probs[r * k + j], kProbFloor);
      total += q * (std::log(q) - std::log(h[j]));
    }
  }
  return total / static_cast<double>(du.size());
}

// ------------------------------------------------------------------- trainer

struct EpochMetrics {
  std::size_t epoch = 0;
  double lr = 0.0;
  double recon = 0.0, kl_z = 0.0, kl_y = 0.0, kl_label_fit = 0.0, ce = 0.0, ot = 0.0;
  double w_t = 0.0;
  double total = 0.0;
  double train_error = 0.0;
  double test_error = std::numeric_limits<double>::quiet_NaN();
  double diag_kl_qy_vs_phat_on_DU = std::numeric_limits<double>::quiet_NaN();
  double smooth_elbo_relative_error = std::numeric_limits<double>::quiet_NaN();
  double wall_time = 0.0;  // seconds; written to timings.jsonl only

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"epoch", epoch},
            {"lr", lr},
            {"recon", recon},
            {"kl_z", kl_z},
            {"kl_y", kl_y},
            {"kl_label_fit", kl_label_fit},
            {"ce", ce},
            {"ot", ot},
            {"w_t", w_t},
            {"total", total},
            {"train_error", num(train_error)},
            {"test_error", num(test_error)},
            {"diag_kl_qy_vs_phat_on_DU", num(diag_kl_qy_vs_phat_on_DU)},
            {"smooth_elbo_relative_error", num(smooth_elbo_relative_error)}};
  }

  static EpochMetrics from_json(const nlohmann::json& j) {
    auto num = [&](const char* k) {
      return j.at(k).is_null() ? std::numeric_limits<double>::quiet_NaN() : j.at(k).get<double>();
    };
    EpochMetrics m;
    m.epoch = j.at("epoch").get<std::size_t>();
    m.lr = num("lr");
    m.recon = num("recon");
    m.kl_z = num("kl_z");
    m.kl_y = num("kl_y");
    m.kl_label_fit = num("kl_label_fit");
    m.ce = num("ce");
    m.ot = num("ot");
    m.w_t = num("w_t");
    m.total = num("total");
    m.train_error = num("train_error");
    m.test_error = num("test_error");
    m.diag_kl_qy_vs_phat_on_DU = num("diag_kl_qy_vs_phat_on_DU");
    m.smooth_elbo_relative_error = num("smooth_elbo_relative_error");
    return m;
  }
};

inline std::vector<EpochMetrics> read_metrics(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read metrics " + path);
  std::vector<EpochMetrics> out;
  std::string line;
  while (std::getline(f, line))
    if (!line.empty()) out.push_back(EpochMetrics::from_json(nlohmann::json::parse(line)));
  return out;
}

struct TrainResult {
  ModelParams params;
  std::vector<EpochMetrics> history;  // epochs run by this call
};

class Trainer {
 public:
  explicit Trainer(TrainConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

  /// Optional per-epoch observer (progress output).
  std::function<void(const EpochMetrics&)> on_epoch;

  TrainResult run(const std::optional<std::string>& resume_from = std::nullopt) {
    namespace fs = std::filesystem;
    TrainData data = load_train_data(cfg_);
    const Dataset& dl = data.split.labeled;
    const UnlabeledSet& du = data.split.unlabeled;
    if (dl.empty()) throw DomainError("no labeled examples (data.labeled = 0)");
    if (cfg_.mode != LossMode::CeOnly && du.size() < 2) throw DomainError("fewer than 2 unlabeled examples");

    ModelConfig mc;
    mc.input_dim = data.train.input_dim;
    mc.num_classes = data.train.num_classes;
    mc.z_dim = cfg_.z_dim;
    mc.hidden = cfg_.hidden;
    mc.decoder_var = cfg_.decoder_var;

    Rng init_rng(cfg_.seed_init, 0x1417);
    ModelParams params = init_params(mc, init_rng);
    SgdMomentum opt(cfg_.momentum);
    std::size_t start = 1;
    if (resume_from) {
      Checkpoint ck = load_checkpoint(*resume_from);
      const auto& c = ck.params.config();
      if (c.input_dim != mc.input_dim || c.num_classes != mc.num_classes || c.z_dim != mc.z_dim ||
          c.hidden != mc.hidden) {
        throw ConfigError("checkpoint " + *resume_from + " does not match the configured model");
      }
      params = std::move(ck.params);
      opt.load(ck.velocity);
      start = ck.epoch + 1;
    }

    fs::create_directories(cfg_.out_dir);
    const fs::path dir(cfg_.out_dir);
    {
      std::ofstream(dir / "config.txt") << cfg_.to_text();
      std::ofstream(dir / "data_manifest.json") << data.manifest.dump(2) << '\n';
    }
    const auto mode = resume_from ? std::ios::app : std::ios::trunc;
    std::ofstream metrics_out(dir / "metrics.jsonl", std::ios::out | mode);
    std::ofstream timings_out(dir / "timings.jsonl", std::ios::out | mode);
    if (!metrics_out || !timings_out) throw IoError("cannot write metrics under " + cfg_.out_dir);

    StepConfig sc;
    sc.objective.mode = cfg_.mode;
    sc.objective.beta = cfg_.beta;
    sc.objective.epsilon = cfg_.epsilon;
    sc.objective.tau = cfg_.tau;
    sc.objective.alpha = cfg_.alpha;
    sc.objective.ot_target_grad = cfg_.ot_target_grad;
    if (cfg_.prior == "labeled") {
      // Laplace-smoothed class frequencies of D_L.
      const auto counts = dl.class_counts();
      sc.objective.prior_y.resize(mc.num_classes);
      for (std::size_t k = 0; k < mc.num_classes; ++k)
        sc.objective.prior_y[k] = (static_cast<double>(counts[k]) + 1.0) /
                                  static_cast<double>(dl.size() + mc.num_classes);
    }
    sc.warmup = WarmupSchedule{cfg_.gamma, cfg_.epochs};

    const std::vector<std::size_t> milestones = cfg_.effective_milestones();
    const std::uint64_t labeled_seed = splitmix64(cfg_.seed_batch ^ 0x1abe1ed5eedULL);
    const std::size_t lb = std::min(cfg_.labeled_batch, dl.size());
    const std::size_t labeled_per_pass = (dl.size() + lb - 1) / lb;

    TrainResult result;
    for (std::size_t t = start; t <= cfg_.epochs; ++t) {
      const auto t0 = std::chrono::steady_clock::now();
      const double lr = lr_at_epoch(cfg_.lr, milestones, cfg_.lr_factor, t);
      std::vector<Batch> ubatches;
      if (du.size() >= 2) ubatches = batches(du, cfg_.unlabeled_batch, cfg_.seed_batch, t);
      std::size_t steps = cfg_.steps_per_epoch;
      if (steps == 0) steps = ubatches.empty() ? labeled_per_pass : ubatches.size();

      EpochMetrics em;
      em.epoch = t;
      em.lr = lr;
      std::uint64_t cached_pass = std::numeric_limits<std::uint64_t>::max();
      std::vector<Batch> lbatches;
      for (std::size_t i = 0; i < steps; ++i) {
        const std::uint64_t global = static_cast<std::uint64_t>(t - 1) * steps + i;
        const std::uint64_t pass = global / labeled_per_pass;
        if (pass != cached_pass) {
          lbatches = batches(dl, lb, labeled_seed, pass);
          cached_pass = pass;
        }
        const Batch& lbatch = lbatches[global % labeled_per_pass];
        static const Batch kNoBatch;
        const Batch& ubatch = ubatches.empty() ? kNoBatch : ubatches[i % ubatches.size()];

        Rng rng = Rng(cfg_.seed_sample, t).derive(i);
        params.zero_grad();
        const LossBreakdown lossb = shot_vae_step(lbatch, ubatch, t, sc, params, rng);
        check_finite(lossb);
        backward(lossb.total_tensor);
        opt.step(params, lr);

        em.recon += lossb.recon;
        em.kl_z += lossb.kl_z;
        em.kl_y += lossb.kl_y;
        em.kl_label_fit += lossb.kl_label_fit;
        em.ce += lossb.ce;
        em.ot += lossb.ot;
        em.w_t = lossb.w_t;
        em.total += lossb.total;
      }
      params.zero_grad();
      const double n = static_cast<double>(steps);
      for (double* f : {&em.recon, &em.kl_z, &em.kl_y, &em.kl_label_fit, &em.ce, &em.ot, &em.total}) *f /= n;

      em.train_error = error_rate(dl, params);
      em.test_error = error_rate(data.test, params);
      if (cfg_.diagnostics) {
        em.diag_kl_qy_vs_phat_on_DU = diag_kl_qy_vs_phat(du, params, cfg_.epsilon);
        em.smooth_elbo_relative_error = relative_error_on(dl, params, sc.objective, t);
      }
      em.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

      metrics_out << em.to_json().dump() << '\n' << std::flush;
      timings_out << nlohmann::json{{"epoch", t}, {"wall_time", em.wall_time}}.dump() << '\n' << std::flush;
      if (on_epoch) on_epoch(em);
      result.history.push_back(em);

      const bool at_milestone = std::find(milestones.begin(), milestones.end(), t) != milestones.end();
      if (cfg_.checkpoint_milestones && at_milestone) {
        save_checkpoint({params.clone(), opt.state(params), t}, (dir / ("epoch_" + std::to_string(t) + ".ckpt")).string());
      }
    }
    save_checkpoint({params.clone(), opt.state(params), std::max(cfg_.epochs, start - 1)}, (dir / "final.ckpt").string());
    result.params = std::move(params);
    return result;
  }

  const TrainConfig& config() const noexcept { return cfg_; }

 private:
  static void check_finite(const LossBreakdown& b) {
    const std::pair<const char*, double> parts[] = {{"recon", b.recon}, {"kl_z", b.kl_z},
                                                    {"kl_y", b.kl_y},   {"kl_label_fit", b.kl_label_fit},
                                                    {"ce", b.ce},       {"ot", b.ot},
                                                    {"total", b.total}};
    for (const auto& [name, v] : parts)
      if (!std::isfinite(v)) throw NonFiniteLossError(name, v);
  }

  /// |smooth-ELBO - ELBO_DL| / |ELBO_DL| over D_L, on a sampling stream of its own.
  double relative_error_on(const Dataset& dl, const ModelParams& params, const ObjectiveConfig& oc,
                           std::size_t t) const {
    Rng rng = Rng(cfg_.seed_sample ^ 0xd1a65eedULL, t);
    std::vector<std::size_t> idx(dl.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return smooth_elbo_gap(dl.rows_tensor(idx), dl.labels, params, oc, rng).relative_error();
  }

  TrainConfig cfg_;
};

inline TrainResult train(const TrainConfig& cfg, const std::optional<std::string>& resume_from = std::nullopt) {
  return Trainer(cfg).run(resume_from);
}

}  // namespace shotvae
