#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "shotvae/verification.hpp"

using namespace shotvae;
namespace fs = std::filesystem;

namespace {

void expect_consistent(const PropositionReport& r) {
  EXPECT_EQ(r.passed, r.max_violation <= r.tolerance) << r.id;
  EXPECT_GT(r.samples_checked, 0u) << r.id;
  EXPECT_TRUE(std::isfinite(r.max_violation)) << r.id;
}

std::vector<double> midpoint(const std::vector<double>& a, const std::vector<double>& b, double) {
  std::vector<double> m(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) m[i] = 0.5 * (a[i] + b[i]);
  return m;
}

}  // namespace

TEST(PropB2, PassesWithDefaults) {
  const auto r = verify_prop_b2({});
  expect_consistent(r);
  EXPECT_TRUE(r.passed) << r.to_json().dump(2);
  EXPECT_EQ(r.metrics.at("violations"), 0.0);
  EXPECT_LE(r.metrics.at("worst_diff_minus_bound"), 0.0);
}

TEST(PropB2, RejectsBadClassRange) {
  B2Config c;
  c.min_classes = 1;
  EXPECT_THROW(verify_prop_b2(c), DomainError);
}

TEST(PropD4, PassesWithDefaults) {
  const auto r = verify_prop_d4({});
  expect_consistent(r);
  EXPECT_TRUE(r.passed) << r.to_json().dump(2);
  EXPECT_LE(r.metrics.at("worst_perturbation_gain"), 0.0);
}

TEST(PropE5, PassesWithDefaults) {
  const auto r = verify_prop_e5({});
  expect_consistent(r);
  EXPECT_TRUE(r.passed) << r.to_json().dump(2);
  EXPECT_LT(r.metrics.at("max_identity_error"), 1e-9);
  EXPECT_GE(r.metrics.at("min_margin"), 0.0);
}

TEST(PropE6, PassesWithDefaults) {
  const auto r = verify_prop_e6({});
  expect_consistent(r);
  EXPECT_TRUE(r.passed) << r.to_json().dump(2);
  EXPECT_LT(r.metrics.at("max_kkt_residual"), 1e-9);
}

TEST(PropE6, MidpointInterpolationIsCaught) {
  E6Config c;
  c.interpolation = midpoint;
  const auto r = verify_prop_e6(c);
  expect_consistent(r);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_violation, 0.0);
}

TEST(SmoothingGap, ZeroWithoutPerturbation) {
  const std::vector<double> h = smooth_label_values(2, 1e-2, 5);
  const std::vector<double> p{0.1, 0.2, 0.3, 0.25, 0.15};
  EXPECT_EQ(verify_detail::smoothing_gap(h, h, p), 0.0);
}

TEST(SmoothingGap, PerturbationsHaveExactSupNorm) {
  Rng rng(4);
  const std::vector<double> h = smooth_label_values(0, 1e-2, 4);
  const auto dirs = verify_detail::sup_norm_perturbations(h, 1e-3, 10, rng);
  ASSERT_FALSE(dirs.empty());
  for (const auto& d : dirs) {
    double sup = 0.0, sum = 0.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      sup = std::max(sup, std::abs(d[i]));
      sum += d[i];
      EXPECT_GE(h[i] + d[i], 0.5 * h[i]);
    }
    EXPECT_NEAR(sup, 1e-3, 1e-15);
    EXPECT_NEAR(sum, 0.0, 1e-15);
  }
}

TEST(SmoothingGap, QuadraticTermGrowsAsEpsilonShrinks) {
  const double m = 2.0, delta = 1e-3;
  auto quad = [&](double eps) {
    return verify_detail::smoothing_envelope(4, m, eps, delta) - 4 * m * delta - 4 * std::log(1 / (1 - eps)) * delta;
  };
  EXPECT_NEAR(quad(1e-4) / quad(1e-2), 100.0, 1e-6);
}

TEST(PropA1, TenClassesStayInsideEnvelope) {
  A1Config c;
  c.class_counts = {10};
  c.eps_grid = {1e-3};
  c.delta_grid = {1e-4};
  const auto r = verify_prop_a1(c);
  expect_consistent(r);
  EXPECT_TRUE(r.passed) << r.to_json().dump(2);
}

// Two classes with small delta sit outside the stated envelope; the looser
// two-term bound still holds everywhere.
TEST(PropA1, DefaultGridReportsTwoClassExcess) {
  const auto r = verify_prop_a1({});
  expect_consistent(r);
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.metrics.at("envelope_violations"), 0.0);
  EXPECT_EQ(r.metrics.at("two_term_bound_violations"), 0.0);
}

TEST(PropA1, DeterministicPerSeed) {
  A1Config c;
  c.class_counts = {4};
  c.priors_per_cell = 5;
  EXPECT_EQ(verify_prop_a1(c).to_json(), verify_prop_a1(c).to_json());
}

TEST(PropC3, ModerateDeltaStaysInsideEnvelope) {
  C3Config c;
  c.delta_grid = {1e-3};
  c.toy_joints = 20;
  const auto r = verify_prop_c3(c);
  expect_consistent(r);
  EXPECT_EQ(r.metrics.at("envelope_violations"), 0.0) << r.to_json().dump(2);
  EXPECT_LE(r.metrics.at("worst_elbo_minus_log_px"), 0.0);
}

TEST(PropC3, ConstantsMatchClassCount) {
  C3Config c;
  c.delta_grid = {1e-2};
  c.toy_joints = 5;
  const auto r = verify_prop_c3(c);
  const double k = 4.0;
  EXPECT_DOUBLE_EQ(r.metrics.at("C2"), k * (k - 1));
  EXPECT_NEAR(r.metrics.at("C1"), k * r.metrics.at("M") + k * std::log(1 / (1 - c.epsilon)), 1e-12);
}

TEST(PropC3, DeterministicPerSeed) {
  C3Config c;
  c.toy_joints = 5;
  EXPECT_EQ(verify_prop_c3(c).to_json(), verify_prop_c3(c).to_json());
}

TEST(Report, JsonCarriesAllFields) {
  const auto j = verify_prop_e5(E5Config{5, 4, 8, 3, 1e-9, 1});
  const auto parsed = nlohmann::json::parse(j.to_json().dump());
  for (const char* key : {"id", "passed", "max_violation", "tolerance", "samples_checked", "details", "metrics"})
    EXPECT_TRUE(parsed.contains(key)) << key;
  EXPECT_EQ(parsed["id"], "E5");
}

TEST(VerifyCli, WritesParsableReports) {
  const fs::path out = fs::temp_directory_path() / "shotvae_verify_cli";
  fs::remove_all(out);
  const std::string cmd = std::string("SHOTVAE_LOG=quiet \"") + SHOTVAE_CLI + "\" verify --props e5,b2 --out \"" +
                          out.string() + "\" > /dev/null";
  ASSERT_EQ(std::system(cmd.c_str()), 0);
  for (const char* id : {"E5", "B2"}) {
    std::ifstream f(out / (std::string(id) + ".json"));
    ASSERT_TRUE(f) << id;
    const auto j = nlohmann::json::parse(f);
    EXPECT_EQ(j["id"], id);
    EXPECT_TRUE(j["passed"].get<bool>());
  }
  fs::remove_all(out);
}
