// shotvae command-line tool: train, eval, generate, verify, split.
//
// Exit codes: 0 success, 1 failed check (or aborted training), 2 usage or I/O error.
// SHOTVAE_LOG=quiet|info|debug controls progress output (default info).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "shotvae/shotvae.hpp"

namespace fs = std::filesystem;
using namespace shotvae;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kUsage = 2;

enum class Verbosity { Quiet, Info, Debug };

Verbosity verbosity() {
  const char* v = std::getenv("SHOTVAE_LOG");
  if (!v) return Verbosity::Info;
  const std::string s(v);
  if (s == "quiet") return Verbosity::Quiet;
  if (s == "debug") return Verbosity::Debug;
  return Verbosity::Info;
}

bool info() { return verbosity() != Verbosity::Quiet; }

nlohmann::json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot read " + path);
  try {
    return nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path + ": " + e.what());
  }
}

/// Data descriptors:
///   idx:IMAGES,LABELS        an IDX pair
///   RUN_DIR                  a run directory holding data_manifest.json
///   MANIFEST.json            a data manifest written by `train`
///   SPEC.json                a synthetic generator spec
/// `part` selects test / labeled / unlabeled / all for manifests.
Dataset load_data(const std::string& desc, const std::string& part) {
  if (desc.rfind("idx:", 0) == 0) {
    const std::string rest = desc.substr(4);
    const auto comma = rest.find(',');
    if (comma == std::string::npos) throw IoError("idx descriptor needs idx:IMAGES,LABELS");
    return load_idx(rest.substr(0, comma), rest.substr(comma + 1));
  }
  std::string path = desc;
  if (fs::is_directory(path)) path = (fs::path(path) / "data_manifest.json").string();
  const nlohmann::json j = read_json(path);
  if (j.contains("source")) return load_manifest_part(j, part);
  if (j.value("generator", std::string{}) == "shotvae-synth-v1") return synth_generate(synth_spec_from_json(j));
  throw IoError(path + ": neither a data manifest nor a synthetic spec");
}

std::vector<double> row_of(const Dataset& ds, std::size_t i) {
  if (i >= ds.size()) throw DomainError("row " + std::to_string(i) + " out of range for " + std::to_string(ds.size()));
  const auto r = ds.row(i);
  return {r.begin(), r.end()};
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string config;
  std::string resume;
  std::vector<std::string> overrides;
};

int cmd_train(const TrainArgs& a) {
  std::map<std::string, std::string> kv = TrainConfig::load(a.config).to_map();
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + o + "'");
    kv[config_detail::trim(o.substr(0, eq))] = config_detail::trim(o.substr(eq + 1));
  }
  Trainer trainer(TrainConfig::from_map(kv));
  if (info()) {
    trainer.on_epoch = [](const EpochMetrics& m) {
      std::cout << "epoch " << m.epoch << " lr " << m.lr << " loss " << m.total << " w_t " << m.w_t
                << " train_err " << m.train_error << " test_err " << m.test_error << " (" << m.wall_time << " s)"
                << std::endl;
    };
  }
  try {
    const TrainResult r = a.resume.empty() ? trainer.run() : trainer.run(a.resume);
    if (!r.history.empty()) {
      const auto& last = r.history.back();
      std::cout << "final epoch " << last.epoch << " test_error " << last.test_error << " train_error "
                << last.train_error << '\n';
    }
  } catch (const NonFiniteLossError& e) {
    std::cerr << "training aborted: " << e.what() << '\n';
    return kCheckFailed;
  }
  return kOk;
}

// ---------------------------------------------------------------- eval

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& part) {
  const Dataset ds = load_data(data, part);
  const double err = evaluate(ckpt, ds);
  std::cout << nlohmann::json{{"checkpoint", ckpt}, {"examples", ds.size()}, {"error_rate", err}}.dump() << '\n';
  return kOk;
}

// ------------------------------------------------------------- generate

struct GenerateArgs {
  std::string ckpt, input, data, part = "test", out;
  std::size_t index = 0;
  std::uint64_t seed = 0;
  double epsilon = 1e-3;
};

int cmd_generate(const GenerateArgs& a) {
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const ModelConfig& mc = ck.params.config();
  std::vector<double> x;
  std::size_t rows = 0, cols = 0;
  if (!a.input.empty()) {
    const GrayImage img = read_pgm(a.input);
    x = img.to_unit();
    rows = img.rows;
    cols = img.cols;
  } else if (!a.data.empty()) {
    Dataset ds = load_data(a.data, a.part);
    x = row_of(ds, a.index);
    rows = ds.image_rows;
    cols = ds.image_cols;
  } else {
    throw ConfigError("generate needs --input IMG or --data DESC");
  }
  if (x.size() != mc.input_dim) {
    throw ShapeError("source image has " + std::to_string(x.size()) + " pixels, model expects " +
                     std::to_string(mc.input_dim));
  }
  fs::create_directories(a.out);
  const Tensor xt({1, mc.input_dim}, x);
  std::vector<GrayImage> columns{GrayImage::from_unit(x, rows, cols)};
  for (std::size_t k = 0; k < mc.num_classes; ++k) {
    Rng rng(a.seed, 0x6e4);  // same style sample for every class
    const Tensor out = conditional_generate(xt, k, ck.params, a.epsilon, rng);
    columns.push_back(GrayImage::from_unit(out.to_vector(), rows, cols));
    write_pgm(columns.back(), (fs::path(a.out) / ("class_" + std::to_string(k) + ".pgm")).string());
  }
  write_pgm(montage_row(columns), (fs::path(a.out) / "montage.pgm").string());
  if (info()) std::cout << "wrote " << mc.num_classes << " class images and montage.pgm to " << a.out << '\n';
  return kOk;
}

// --------------------------------------------------------------- verify

int cmd_verify(const std::string& props, std::uint64_t seed, const std::string& out, const std::string& fault) {
  std::set<std::string> selected;
  std::stringstream ss(props);
  std::string p;
  while (std::getline(ss, p, ',')) {
    p = config_detail::trim(p);
    if (p.empty()) continue;
    static const std::set<std::string> known{"a1", "b2", "c3", "d4", "e5", "e6"};
    if (!known.count(p)) throw ConfigError("unknown proposition '" + p + "' (a1,b2,c3,d4,e5,e6)");
    selected.insert(p);
  }
  if (!fault.empty() && fault != "midpoint-interpolation") {
    throw ConfigError("unknown fault '" + fault + "' (midpoint-interpolation)");
  }
  fs::create_directories(out);
  bool all_passed = true;
  auto emit = [&](const PropositionReport& r) {
    std::ofstream f(fs::path(out) / (r.id + ".json"));
    f << r.to_json().dump(2) << '\n';
    if (!f) throw IoError("cannot write report under " + out);
    std::cout << (r.passed ? "PASS " : "FAIL ") << r.id << " max_violation=" << r.max_violation
              << " samples=" << r.samples_checked << '\n';
    if (!r.passed || verbosity() == Verbosity::Debug)
      for (const auto& d : r.details) std::cout << "  " << d << '\n';
    all_passed = all_passed && r.passed;
  };
  if (selected.count("a1")) {
    A1Config c;
    c.seed = seed;
    emit(verify_prop_a1(c));
  }
  if (selected.count("b2")) {
    B2Config c;
    c.seed = seed;
    emit(verify_prop_b2(c));
  }
  if (selected.count("c3")) {
    C3Config c;
    c.seed = seed;
    emit(verify_prop_c3(c));
  }
  if (selected.count("d4")) {
    D4Config c;
    c.seed = seed;
    emit(verify_prop_d4(c));
  }
  if (selected.count("e5")) {
    E5Config c;
    c.seed = seed;
    emit(verify_prop_e5(c));
  }
  if (selected.count("e6")) {
    E6Config c;
    c.seed = seed;
    if (fault == "midpoint-interpolation") {
      c.interpolation = [](const std::vector<double>& a, const std::vector<double>& b, double) {
        std::vector<double> m(a.size());
        for (std::size_t i = 0; i < a.size(); ++i) m[i] = 0.5 * (a[i] + b[i]);
        return m;
      };
    }
    emit(verify_prop_e6(c));
  }
  return all_passed ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------- split

int cmd_split(const std::string& data, const std::string& part, std::size_t labeled, std::uint64_t seed,
              bool unstratified, const std::string& out) {
  const Dataset ds = load_data(data, part);
  const SplitResult s = split(ds, SplitSpec{labeled, seed, !unstratified});
  fs::create_directories(out);
  const fs::path dir(out);
  write_idx(s.labeled, (dir / "labeled-images.idx").string(), (dir / "labeled-labels.idx").string());
  write_idx(s.unlabeled.as_dataset_for_export(), (dir / "unlabeled-images.idx").string(),
            (dir / "unlabeled-labels.idx").string());
  const nlohmann::json j{{"labeled_count", labeled},
                         {"seed", seed},
                         {"stratified", !unstratified},
                         {"labeled_indices", s.labeled_indices},
                         {"unlabeled_indices", s.unlabeled_indices},
                         {"labeled_class_counts", s.labeled.class_counts()}};
  std::ofstream(dir / "split.json") << j.dump(2) << '\n';
  if (info()) {
    std::cout << "labeled " << s.labeled.size() << ", unlabeled " << s.unlabeled.size() << " -> " << out << '\n';
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SHOT-VAE semi-supervised VAE: training, evaluation, generation and verification"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train a model from a config file");
  train->add_option("--config", train_args.config, "Config file (key = value)")->required()->check(CLI::ExistingFile);
  train->add_option("--resume", train_args.resume, "Checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--set", train_args.overrides, "Override a config key (key=value), repeatable");

  std::string ckpt, data, part = "test";
  auto* eval = app.add_subcommand("eval", "Classification error of a checkpoint on a dataset");
  eval->add_option("--ckpt", ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Data descriptor (idx:IMAGES,LABELS | run dir | manifest/spec JSON)")->required();
  eval->add_option("--part", part, "Manifest part: test, labeled, unlabeled, all")->capture_default_str();

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "Class-swapped reconstructions of one image");
  generate->add_option("--ckpt", gen.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  generate->add_option("--input", gen.input, "Source image (PGM)");
  generate->add_option("--data", gen.data, "Take the source from a dataset instead");
  generate->add_option("--part", gen.part, "Manifest part for --data")->capture_default_str();
  generate->add_option("--index", gen.index, "Row of --data")->capture_default_str();
  generate->add_option("--out", gen.out, "Output directory")->required();
  generate->add_option("--seed", gen.seed, "Sampling seed")->capture_default_str();
  generate->add_option("--epsilon", gen.epsilon, "Label smoothing of the class input")->capture_default_str();

  std::string props = "a1,b2,c3,d4,e5,e6", verify_out = "verify", fault;
  std::uint64_t verify_seed = 0;
  auto* verify = app.add_subcommand("verify", "Run the numerical proposition checks");
  verify->add_option("--props", props, "Comma-separated subset of a1,b2,c3,d4,e5,e6")->capture_default_str();
  verify->add_option("--seed", verify_seed, "Seed")->capture_default_str();
  verify->add_option("--out", verify_out, "Directory for JSON reports")->capture_default_str();
  verify->add_option("--fault", fault, "Inject a known-bad component (midpoint-interpolation)");

  std::string split_data, split_part = "all", split_out;
  std::size_t split_labeled = 100;
  std::uint64_t split_seed = 0;
  bool unstratified = false;
  auto* splitc = app.add_subcommand("split", "Write a labeled/unlabeled split");
  splitc->add_option("--data", split_data, "Data descriptor")->required();
  splitc->add_option("--part", split_part, "Manifest part")->capture_default_str();
  splitc->add_option("--labeled", split_labeled, "Number of labeled examples")->required();
  splitc->add_option("--seed", split_seed, "Seed")->capture_default_str();
  splitc->add_flag("--unstratified", unstratified, "Draw labels without per-class quotas");
  splitc->add_option("--out", split_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return cmd_train(train_args);
    if (*eval) return cmd_eval(ckpt, data, part);
    if (*generate) return cmd_generate(gen);
    if (*verify) return cmd_verify(props, verify_seed, verify_out, fault);
    if (*splitc) return cmd_split(split_data, split_part, split_labeled, split_seed, unstratified, split_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
