#pragma once

// Training configuration and its flat text format.
//
// One `key = value` per line, `#` starts a comment, blank lines are ignored.
// Unknown keys are an error. Keys:
//
//   loss.mode            shot | smooth_only | m2 | ce_only      (shot)
//   loss.epsilon         label smoothing                         (0.001)
//   loss.tau             Gumbel-softmax temperature               (0.67)
//   loss.beta            weight of the z KL term                  (0.01)
//   loss.gamma           warm-up sharpness                        (5)
//   loss.alpha           cross-entropy weight, m2 only            (1)
//   loss.prior           uniform | labeled                        (uniform)
//   loss.ot_target_grad  on | off                                 (off)
//   train.epochs         t_max                                    (100)
//   train.labeled_batch                                           (64)
//   train.unlabeled_batch                                         (512)
//   train.steps_per_epoch  0 = number of unlabeled batches        (0)
//   optim.lr                                                      (0.1)
//   optim.momentum                                                (0.9)
//   optim.milestones     comma-separated epochs; empty = 50%,75%  ()
//   optim.lr_factor                                               (0.1)
//   model.hidden, model.z_dim, model.decoder_var                  (256, 10, 1)
//   seed.init, seed.split, seed.batch, seed.sample                (0, 0, 0, 0)
//   data.source          synth | idx                              (synth)
//   data.labeled         labeled examples                         (100)
//   data.stratified      on | off                                 (on)
//   data.train_images, data.train_labels, data.test_images, data.test_labels   (idx paths)
//   data.synth.num_classes, .input_dim, .per_class, .test_per_class, .style_dim,
//   data.synth.style_scale, .noise_sigma, .separation, .background, .seed
//   out.dir              output directory                         (run)
//   out.checkpoint_milestones  on | off                           (on)
//   metrics.diagnostics  on | off                                 (on)

#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "shotvae/data.hpp"
#include "shotvae/errors.hpp"
#include "shotvae/objectives.hpp"

namespace shotvae {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  // loss
  LossMode mode = LossMode::Shot;
  double epsilon = 1e-3;
  double tau = 0.67;
  double beta = 0.01;
  double gamma = 5.0;
  double alpha = 1.0;
  std::string prior = "uniform";
  bool ot_target_grad = false;
  // train
  std::size_t epochs = 100;
  std::size_t labeled_batch = 64;
  std::size_t unlabeled_batch = 512;
  std::size_t steps_per_epoch = 0;
  // optimizer
  double lr = 0.1;
  double momentum = 0.9;
  std::vector<std::size_t> milestones;
  double lr_factor = 0.1;
  // model
  std::size_t hidden = 256;
  std::size_t z_dim = 10;
  double decoder_var = 1.0;
  // seeds
  std::uint64_t seed_init = 0;
  std::uint64_t seed_split = 0;
  std::uint64_t seed_batch = 0;
  std::uint64_t seed_sample = 0;
  // data
  std::string data_source = "synth";
  std::size_t labeled = 100;
  bool stratified = true;
  std::string train_images, train_labels, test_images, test_labels;
  SynthSpec synth;
  std::size_t synth_test_per_class = 250;
  // output
  std::string out_dir = "run";
  bool checkpoint_milestones = true;
  bool diagnostics = true;

  /// Milestones in effect: the configured list, or 50% and 75% of epochs.
  std::vector<std::size_t> effective_milestones() const {
    if (!milestones.empty()) return milestones;
    std::vector<std::size_t> m;
    for (std::size_t e : {epochs / 2, (3 * epochs) / 4})
      if (e >= 1 && (m.empty() || m.back() != e)) m.push_back(e);
    return m;
  }

  void validate() const {
    if (epochs == 0) throw ConfigError("train.epochs must be positive");
    if (labeled_batch == 0) throw ConfigError("train.labeled_batch must be positive");
    if (mode != LossMode::CeOnly && unlabeled_batch < 2) throw ConfigError("train.unlabeled_batch must be >= 2");
    if (!(lr > 0.0)) throw ConfigError("optim.lr must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("optim.momentum must be in [0, 1)");
    if (!(lr_factor > 0.0)) throw ConfigError("optim.lr_factor must be positive");
    if (!(tau > 0.0)) throw ConfigError("loss.tau must be positive");
    if (!(beta > 0.0)) throw ConfigError("loss.beta must be positive");
    if (!(gamma > 0.0)) throw ConfigError("loss.gamma must be positive");
    if (alpha < 0.0) throw ConfigError("loss.alpha must be non-negative");
    if (prior != "uniform" && prior != "labeled") throw ConfigError("loss.prior must be uniform or labeled");
    if (data_source != "synth" && data_source != "idx") throw ConfigError("data.source must be synth or idx");
    if (data_source == "idx" && (train_images.empty() || train_labels.empty())) {
      throw ConfigError("idx data needs data.train_images and data.train_labels");
    }
    if (hidden == 0 || z_dim == 0) throw ConfigError("model dimensions must be positive");
    if (!(decoder_var > 0.0)) throw ConfigError("model.decoder_var must be positive");
  }

  std::map<std::string, std::string> to_map() const;
  static TrainConfig from_map(const std::map<std::string, std::string>& kv);

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : to_map()) os << k << " = " << v << '\n';
    return os.str();
  }

  static TrainConfig parse(const std::string& text);
  static TrainConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_bool(bool v) { return v ? "on" : "off"; }

inline double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) throw ConfigError(key + ": not a number: '" + v + "'");
  return out;
}

inline std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ConfigError(key + ": not a non-negative integer: '" + v + "'");
  }
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected on/off, got '" + v + "'");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(parse_uint(key, item));
  }
  return out;
}

}  // namespace config_detail

inline std::map<std::string, std::string> TrainConfig::to_map() const {
  using namespace config_detail;
  std::string ms;
  for (std::size_t i = 0; i < milestones.size(); ++i) ms += (i ? "," : "") + std::to_string(milestones[i]);
  return {
      {"loss.mode", to_string(mode)},
      {"loss.epsilon", fmt_double(epsilon)},
      {"loss.tau", fmt_double(tau)},
      {"loss.beta", fmt_double(beta)},
      {"loss.gamma", fmt_double(gamma)},
      {"loss.alpha", fmt_double(alpha)},
      {"loss.prior", prior},
      {"loss.ot_target_grad", fmt_bool(ot_target_grad)},
      {"train.epochs", std::to_string(epochs)},
      {"train.labeled_batch", std::to_string(labeled_batch)},
      {"train.unlabeled_batch", std::to_string(unlabeled_batch)},
      {"train.steps_per_epoch", std::to_string(steps_per_epoch)},
      {"optim.lr", fmt_double(lr)},
      {"optim.momentum", fmt_double(momentum)},
      {"optim.milestones", ms},
      {"optim.lr_factor", fmt_double(lr_factor)},
      {"model.hidden", std::to_string(hidden)},
      {"model.z_dim", std::to_string(z_dim)},
      {"model.decoder_var", fmt_double(decoder_var)},
      {"seed.init", std::to_string(seed_init)},
      {"seed.split", std::to_string(seed_split)},
      {"seed.batch", std::to_string(seed_batch)},
      {"seed.sample", std::to_string(seed_sample)},
      {"data.source", data_source},
      {"data.labeled", std::to_string(labeled)},
      {"data.stratified", fmt_bool(stratified)},
      {"data.train_images", train_images},
      {"data.train_labels", train_labels},
      {"data.test_images", test_images},
      {"data.test_labels", test_labels},
      {"data.synth.num_classes", std::to_string(synth.num_classes)},
      {"data.synth.input_dim", std::to_string(synth.input_dim)},
      {"data.synth.per_class", std::to_string(synth.per_class)},
      {"data.synth.test_per_class", std::to_string(synth_test_per_class)},
      {"data.synth.style_dim", std::to_string(synth.style_dim)},
      {"data.synth.style_scale", fmt_double(synth.style_scale)},
      {"data.synth.noise_sigma", fmt_double(synth.noise_sigma)},
      {"data.synth.separation", fmt_double(synth.separation)},
      {"data.synth.background", fmt_double(synth.background)},
      {"data.synth.seed", std::to_string(synth.seed)},
      {"out.dir", out_dir},
      {"out.checkpoint_milestones", fmt_bool(checkpoint_milestones)},
      {"metrics.diagnostics", fmt_bool(diagnostics)},
  };
}

inline TrainConfig TrainConfig::from_map(const std::map<std::string, std::string>& kv) {
  using namespace config_detail;
  TrainConfig c;
  for (const auto& [k, v] : kv) {
    if (k == "loss.mode") {
      try {
        c.mode = loss_mode_from_string(v);
      } catch (const DomainError& e) {
        throw ConfigError(std::string("loss.mode: ") + e.what());
      }
    } else if (k == "loss.epsilon") c.epsilon = parse_double(k, v);
    else if (k == "loss.tau") c.tau = parse_double(k, v);
    else if (k == "loss.beta") c.beta = parse_double(k, v);
    else if (k == "loss.gamma") c.gamma = parse_double(k, v);
    else if (k == "loss.alpha") c.alpha = parse_double(k, v);
    else if (k == "loss.prior") c.prior = v;
    else if (k == "loss.ot_target_grad") c.ot_target_grad = parse_bool(k, v);
    else if (k == "train.epochs") c.epochs = parse_uint(k, v);
    else if (k == "train.labeled_batch") c.labeled_batch = parse_uint(k, v);
    else if (k == "train.unlabeled_batch") c.unlabeled_batch = parse_uint(k, v);
    else if (k == "train.steps_per_epoch") c.steps_per_epoch = parse_uint(k, v);
    else if (k == "optim.lr") c.lr = parse_double(k, v);
    else if (k == "optim.momentum") c.momentum = parse_double(k, v);
    else if (k == "optim.milestones") c.milestones = parse_list(k, v);
    else if (k == "optim.lr_factor") c.lr_factor = parse_double(k, v);
    else if (k == "model.hidden") c.hidden = parse_uint(k, v);
    else if (k == "model.z_dim") c.z_dim = parse_uint(k, v);
    else if (k == "model.decoder_var") c.decoder_var = parse_double(k, v);
    else if (k == "seed.init") c.seed_init = parse_uint(k, v);
    else if (k == "seed.split") c.seed_split = parse_uint(k, v);
    else if (k == "seed.batch") c.seed_batch = parse_uint(k, v);
    else if (k == "seed.sample") c.seed_sample = parse_uint(k, v);
    else if (k == "data.source") c.data_source = v;
    else if (k == "data.labeled") c.labeled = parse_uint(k, v);
    else if (k == "data.stratified") c.stratified = parse_bool(k, v);
    else if (k == "data.train_images") c.train_images = v;
    else if (k == "data.train_labels") c.train_labels = v;
    else if (k == "data.test_images") c.test_images = v;
    else if (k == "data.test_labels") c.test_labels = v;
    else if (k == "data.synth.num_classes") c.synth.num_classes = parse_uint(k, v);
    else if (k == "data.synth.input_dim") c.synth.input_dim = parse_uint(k, v);
    else if (k == "data.synth.per_class") c.synth.per_class = parse_uint(k, v);
    else if (k == "data.synth.test_per_class") c.synth_test_per_class = parse_uint(k, v);
    else if (k == "data.synth.style_dim") c.synth.style_dim = parse_uint(k, v);
    else if (k == "data.synth.style_scale") c.synth.style_scale = parse_double(k, v);
    else if (k == "data.synth.noise_sigma") c.synth.noise_sigma = parse_double(k, v);
    else if (k == "data.synth.separation") c.synth.separation = parse_double(k, v);
    else if (k == "data.synth.background") c.synth.background = parse_double(k, v);
    else if (k == "data.synth.seed") c.synth.seed = parse_uint(k, v);
    else if (k == "out.dir") c.out_dir = v;
    else if (k == "out.checkpoint_milestones") c.checkpoint_milestones = parse_bool(k, v);
    else if (k == "metrics.diagnostics") c.diagnostics = parse_bool(k, v);
    else throw ConfigError("unknown config key '" + k + "'");
  }
  return c;
}

inline TrainConfig TrainConfig::parse(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = config_detail::trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (kv.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv[key] = config_detail::trim(line.substr(eq + 1));
  }
  return from_map(kv);
}

}  // namespace shotvae
