// Acceptance driver: one PASS/FAIL/SKIP line per criterion, exit 1 if any fails.
//
//   acceptance [--workdir DIR] [--only 1,2,...]
//
// SHOTVAE_MNIST_DIR enables criterion 6 (train/t10k IDX files in that directory).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "shotvae/shotvae.hpp"

namespace fs = std::filesystem;
using namespace shotvae;
using Clock = std::chrono::steady_clock;

namespace {

// Pinned thresholds.
constexpr double kGradRelTol = 1e-4;
constexpr double kGradSeconds = 30.0;
constexpr double kPropSeconds = 60.0;
constexpr double kDeskSeconds = 20.0 * 60.0;
constexpr double kMnistMaxError = 0.15;
constexpr double kExampleTol = 1e-15;
constexpr std::size_t kSeeds = 5;
const std::vector<std::string> kModes{"shot", "m2", "ce_only"};

enum class Verdict { Pass, Fail, Skip };

struct Outcome {
  Verdict verdict = Verdict::Fail;
  std::string note;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string num(double v, int prec = 4) {
  std::ostringstream os;
  os << std::setprecision(prec) << v;
  return os.str();
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

// Sample standard deviation (n - 1).
double stdev(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / (v.size() - 1));
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// ------------------------------------------------------------- criterion 1

Outcome propositions() {
  struct Item {
    std::string id;
    std::function<PropositionReport()> run;
    double time_limit;
  };
  const std::vector<Item> items{
      {"E6", [] { return verify_prop_e6({}); }, kPropSeconds},
      {"B2", [] { return verify_prop_b2({}); }, 0.0},
      {"E5", [] { return verify_prop_e5({}); }, kPropSeconds},
      {"A1", [] { return verify_prop_a1({}); }, 0.0},
      {"C3", [] { return verify_prop_c3({}); }, 0.0},
      {"D4", [] { return verify_prop_d4({}); }, 0.0},
  };
  Outcome o{Verdict::Pass, ""};
  for (const auto& it : items) {
    const auto t0 = Clock::now();
    const PropositionReport r = it.run();
    const double secs = seconds_since(t0);
    const bool in_time = it.time_limit <= 0.0 || secs < it.time_limit;
    const bool ok = r.passed && in_time;
    std::cout << "    " << (ok ? "pass " : "FAIL ") << r.id << " max_violation=" << num(r.max_violation)
              << " samples=" << r.samples_checked << " time=" << num(secs, 3) << "s\n";
    if (!r.passed)
      for (const auto& d : r.details) std::cout << "      " << d << '\n';
    if (!ok) {
      o.verdict = Verdict::Fail;
      o.note += (o.note.empty() ? "" : ",") + r.id;
    }
  }
  o.note = o.note.empty() ? "all six checks hold" : "failing: " + o.note;
  return o;
}

// ------------------------------------------------------------- criterion 2

Outcome gradient_check() {
  const auto t0 = Clock::now();
  ModelConfig mc;
  mc.input_dim = 5;
  mc.num_classes = 3;
  mc.z_dim = 3;
  mc.hidden = 8;
  Rng init(47);
  ModelParams p = init_params(mc, init);

  Rng data(48);
  auto inputs = [&] {
    std::vector<double> v(2 * mc.input_dim);
    for (auto& x : v) x = data.uniform();
    return Tensor({2, mc.input_dim}, std::move(v));
  };
  Batch lab{inputs(), std::vector<std::size_t>{0, 2}, {0, 1}};
  Batch unl{inputs(), {}, {0, 1}};
  StepConfig sc;
  sc.objective.ot_target_grad = true;
  sc.warmup = WarmupSchedule{5.0, 2};
  auto loss = [&] {
    Rng rng(49);
    return shot_vae_step(lab, unl, 1, sc, p, rng);
  };

  p.zero_grad();
  backward(loss().total_tensor);
  const double h = 1e-5;
  double worst = 0.0;
  std::size_t checked = 0;
  for (auto& [name, t] : p.entries()) {
    const std::vector<double> g(t.grad().begin(), t.grad().end());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double orig = t[i];
      t.mutable_values()[i] = orig + h;
      const double up = loss().total;
      t.mutable_values()[i] = orig - h;
      const double down = loss().total;
      t.mutable_values()[i] = orig;
      const double fd = (up - down) / (2 * h);
      worst = std::max(worst, std::abs(fd - g[i]) / std::max({std::abs(fd), std::abs(g[i]), 1e-8}));
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  const bool ok = worst < kGradRelTol && checked == p.parameter_count() && secs < kGradSeconds;
  return {ok ? Verdict::Pass : Verdict::Fail, std::to_string(checked) + " parameters, max rel err " + num(worst) +
                                                  ", " + num(secs, 3) + "s"};
}

// ---------------------------------------------------------- criteria 3-5, 7

struct DeskRuns {
  std::map<std::string, std::vector<std::vector<EpochMetrics>>> records;  // mode -> seed -> epochs
  double seconds = 0.0;
};

DeskRuns run_desk(const fs::path& root) {
  const TrainConfig base = TrainConfig::load(std::string(SHOTVAE_SOURCE_DIR) + "/experiments/synth_desk.txt");
  DeskRuns out;
  const auto t0 = Clock::now();
  for (const auto& mode : kModes) {
    for (std::size_t s = 0; s < kSeeds; ++s) {
      TrainConfig c = base;
      c.mode = loss_mode_from_string(mode);
      c.seed_init = c.seed_split = c.seed_batch = c.seed_sample = s;
      c.out_dir = (root / (mode + "_s" + std::to_string(s))).string();
      fs::remove_all(c.out_dir);
      train(c);
      out.records[mode].push_back(read_metrics(c.out_dir + "/metrics.jsonl"));
      std::cout << "    " << mode << " seed " << s << ": test error "
                << num(out.records[mode].back().back().test_error) << '\n'
                << std::flush;
    }
  }
  out.seconds = seconds_since(t0);
  return out;
}

std::vector<double> final_values(const DeskRuns& d, const std::string& mode, double EpochMetrics::*field) {
  std::vector<double> v;
  for (const auto& run : d.records.at(mode)) v.push_back(run.back().*field);
  return v;
}

Outcome desk_gain(const DeskRuns& d) {
  std::map<std::string, std::pair<double, double>> stats;
  for (const auto& m : kModes) {
    const auto e = final_values(d, m, &EpochMetrics::test_error);
    stats[m] = {mean(e), stdev(e)};
    std::cout << "    " << m << ": " << num(mean(e)) << " +- " << num(stdev(e)) << '\n';
  }
  const auto [shot, shot_sd] = stats["shot"];
  const auto [ce, ce_sd] = stats["ce_only"];
  const double gap = ce - shot;
  const bool ok = shot < ce && shot < stats["m2"].first && gap > shot_sd && gap > ce_sd && d.seconds < kDeskSeconds;
  return {ok ? Verdict::Pass : Verdict::Fail, "shot " + num(shot) + ", m2 " + num(stats["m2"].first) + ", ce_only " +
                                                  num(ce) + ", gap " + num(gap) + " vs std " + num(shot_sd) + "/" +
                                                  num(ce_sd) + ", " + num(d.seconds, 4) + "s"};
}

Outcome bottleneck(const DeskRuns& d) {
  const double shot = mean(final_values(d, "shot", &EpochMetrics::diag_kl_qy_vs_phat_on_DU));
  const double m2 = mean(final_values(d, "m2", &EpochMetrics::diag_kl_qy_vs_phat_on_DU));
  return {shot < m2 ? Verdict::Pass : Verdict::Fail, "final KL(q || smoothed label) on D_U: shot " + num(shot) +
                                                         ", m2 " + num(m2)};
}

Outcome smooth_convergence(const DeskRuns& d) {
  std::size_t good = 0;
  std::string detail;
  for (const auto& run : d.records.at("shot")) {
    const std::size_t early = std::max<std::size_t>(run.size() / 10, 1) - 1;
    const double a = run[early].smooth_elbo_relative_error;
    const double b = run.back().smooth_elbo_relative_error;
    if (b < a) ++good;
    detail += (detail.empty() ? "" : "; ") + num(a, 3) + " -> " + num(b, 3);
  }
  return {good == d.records.at("shot").size() ? Verdict::Pass : Verdict::Fail,
          std::to_string(good) + "/" + std::to_string(d.records.at("shot").size()) + " seeds decrease (" + detail +
              ")"};
}

Outcome determinism(const fs::path& first, const fs::path& second) {
  std::size_t same = 0, total = 0;
  for (const auto& mode : kModes) {
    for (std::size_t s = 0; s < kSeeds; ++s) {
      const std::string run = mode + "_s" + std::to_string(s);
      const std::string a = slurp(first / run / "metrics.jsonl");
      if (!a.empty() && a == slurp(second / run / "metrics.jsonl")) ++same;
      ++total;
    }
  }
  return {same == total ? Verdict::Pass : Verdict::Fail,
          std::to_string(same) + "/" + std::to_string(total) + " metrics files identical"};
}

// ------------------------------------------------------------- criterion 6

Outcome mnist(const fs::path& root) {
  const char* dir = std::getenv("SHOTVAE_MNIST_DIR");
  if (!dir || !*dir) return {Verdict::Skip, "SHOTVAE_MNIST_DIR not set"};
  const fs::path d(dir);
  TrainConfig c = TrainConfig::load(std::string(SHOTVAE_SOURCE_DIR) + "/experiments/mnist100.txt");
  c.train_images = (d / "train-images-idx3-ubyte").string();
  c.train_labels = (d / "train-labels-idx1-ubyte").string();
  c.test_images = (d / "t10k-images-idx3-ubyte").string();
  c.test_labels = (d / "t10k-labels-idx1-ubyte").string();
  for (const auto& f : {c.train_images, c.train_labels, c.test_images, c.test_labels})
    if (!fs::exists(f)) return {Verdict::Skip, f + " missing"};
  c.out_dir = (root / "mnist100").string();
  const auto t0 = Clock::now();
  const TrainResult r = train(c);
  const double err = r.history.back().test_error;
  return {err <= kMnistMaxError ? Verdict::Pass : Verdict::Fail,
          "test error " + num(err) + " after " + std::to_string(c.epochs) + " epochs, " + num(seconds_since(t0), 4) +
              "s"};
}

// ------------------------------------------------------------- criterion 8

std::vector<double> as_vector(const Categorical& c) { return {c.probs().begin(), c.probs().end()}; }

Outcome unit_formulas() {
  std::vector<std::string> bad;
  auto near = [&](const std::string& what, double got, double want) {
    if (!(std::abs(got - want) <= kExampleTol)) bad.push_back(what + "=" + num(got, 17));
  };
  auto same = [&](const std::string& what, const std::vector<double>& got, const std::vector<double>& want) {
    if (got.size() != want.size()) {
      bad.push_back(what + " size");
      return;
    }
    for (std::size_t i = 0; i < got.size(); ++i) near(what + "[" + std::to_string(i) + "]", got[i], want[i]);
  };

  const WarmupSchedule w{5.0, 100};
  near("w_0", warmup_weight(0, w), std::exp(-5.0));
  near("w_tmax", warmup_weight(100, w), 1.0);
  near("w_half", warmup_weight(50, w), std::exp(-1.25));
  const WarmupSchedule w2{2.5, 7};
  near("w_0(gamma 2.5)", warmup_weight(0, w2), std::exp(-2.5));
  near("w_tmax(gamma 2.5)", warmup_weight(7, w2), 1.0);

  std::vector<double> k10(10, 0.001 / 9);
  k10[0] = 0.999;
  same("smooth(0,1e-3,10)", as_vector(smooth_label(0, {1e-3, 10})), k10);
  same("smooth(1,0.5,2)", smooth_label_values(1, 0.5, 2), {0.5, 0.5});
  same("smooth(3,0.1,4)", as_vector(smooth_label(3, {0.1, 4})), {0.1 / 3, 0.1 / 3, 0.1 / 3, 0.9});

  auto interp = [](std::vector<double> a, std::vector<double> b, double l) {
    return as_vector(optimal_interpolation(Categorical(std::move(a)), Categorical(std::move(b)), l));
  };
  same("interp(0.5)", interp({1, 0}, {0, 1}, 0.5), {0.5, 0.5});
  same("interp(0.3)", interp({0.8, 0.2}, {0.2, 0.8}, 0.3), {0.62, 0.38});

  const Tensor x0 = Tensor::matrix({{0, 0, 0}}), x1 = Tensor::matrix({{1, 1, 1}});
  same("mixup(0)", mixup_inputs(x0, x1, 0.0).to_vector(), x0.to_vector());
  same("mixup(1)", mixup_inputs(x0, x1, 1.0).to_vector(), x1.to_vector());
  same("mixup(0.5)", mixup_inputs(x0, x1, 0.5).to_vector(), {0.5, 0.5, 0.5});

  if (bad.empty()) return {Verdict::Pass, "warm-up, smoothing, interpolation and mixup examples"};
  std::string note;
  for (const auto& b : bad) note += (note.empty() ? "" : ", ") + b;
  return {Verdict::Fail, note};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::string workdir = "acceptance_runs";
  std::string only;
  app.add_option("--workdir", workdir, "Directory for training runs")->capture_default_str();
  app.add_option("--only", only, "Comma-separated criteria to run (default all)");
  CLI11_PARSE(app, argc, argv);

  std::set<int> selected;
  {
    std::stringstream ss(only);
    std::string tok;
    while (std::getline(ss, tok, ','))
      if (!tok.empty()) selected.insert(std::stoi(tok));
  }
  auto want = [&](int c) { return selected.empty() || selected.count(c) > 0; };

  const fs::path root(workdir);
  fs::create_directories(root);
  std::map<int, Outcome> results;
  std::map<int, std::string> names;
  auto report = [&](int c, const std::string& name, Outcome o) {
    std::cout << "  criterion " << c << " done\n" << std::flush;
    names[c] = name;
    results[c] = std::move(o);
  };
  auto guarded = [&](int c, const std::string& name, const std::function<Outcome()>& f) {
    if (!want(c)) return;
    try {
      report(c, name, f());
    } catch (const std::exception& e) {
      report(c, name, {Verdict::Fail, std::string("error: ") + e.what()});
    }
  };

  guarded(1, "proposition suite", propositions);
  guarded(2, "full-loss gradient", gradient_check);

  if (want(3) || want(4) || want(5) || want(7)) {
    try {
      const DeskRuns first = run_desk(root / "desk_a");
      guarded(3, "desk-scale gain", [&] { return desk_gain(first); });
      guarded(4, "bottleneck diagnostic", [&] { return bottleneck(first); });
      guarded(5, "smooth-ELBO convergence", [&] { return smooth_convergence(first); });
      guarded(7, "determinism", [&] {
        run_desk(root / "desk_b");
        return determinism(root / "desk_a", root / "desk_b");
      });
    } catch (const std::exception& e) {
      for (int c : {3, 4, 5, 7})
        if (want(c)) report(c, "desk runs", {Verdict::Fail, std::string("error: ") + e.what()});
    }
  }

  guarded(6, "MNIST-100", [&] { return mnist(root); });
  guarded(8, "unit formulas", unit_formulas);

  std::size_t pass = 0, fail = 0, skip = 0;
  static const char* tags[] = {"PASS", "FAIL", "SKIP"};
  std::cout << '\n';
  for (const auto& [c, o] : results) {
    std::cout << tags[static_cast<int>(o.verdict)] << " criterion " << c << " (" << names[c] << "): " << o.note
              << '\n';
    if (o.verdict == Verdict::Pass) ++pass;
    if (o.verdict == Verdict::Fail) ++fail;
    if (o.verdict == Verdict::Skip) ++skip;
  }
  std::cout << "summary: " << pass << " pass, " << fail << " fail, " << skip << " skip\n";
  return fail == 0 ? 0 : 1;
}
