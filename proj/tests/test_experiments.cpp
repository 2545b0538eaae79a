#include <cmath>

#include "cvme/errors.hpp"
#include "cvme/experiments.hpp"
#include "doctest.h"

using namespace cvme;

namespace {

ExperimentGrid small_grid() {
  ExperimentGrid g;
  g.base = default_scenario();
  g.base.n = 400;
  g.rho_values = {0.3};
  g.sensitivity_values = {0.9};
  g.n_values = {400};
  g.modes = {SamplingMode::CompletelyRandom};
  g.estimators = {"naive", "oracle"};
  g.replicates = 6;
  g.seed_root = 99;
  g.truth_draws = 100000;
  return g;
}

}  // namespace

TEST_CASE("zero replicates give an empty result without error") {
  ExperimentGrid g = small_grid();
  g.replicates = 0;
  CHECK(run_grid(g, 1).empty());
}

TEST_CASE("empty or unknown estimator sets are rejected") {
  ExperimentGrid g = small_grid();
  g.estimators = {};
  CHECK_THROWS_AS(run_grid(g, 1), ConfigError);
  g.estimators = {"bogus"};
  CHECK_THROWS_AS(run_grid(g, 1), ConfigError);
}

TEST_CASE("grid output is identical for 1 worker and 3 workers") {
  ExperimentGrid g = small_grid();
  auto a = run_grid(g, 1);
  auto b = run_grid(g, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].estimator == b[i].estimator);
    CHECK(a[i].mean_estimate == b[i].mean_estimate);
    CHECK(a[i].percent_bias == b[i].percent_bias);
    CHECK(a[i].coverage == b[i].coverage);
    CHECK(a[i].rmse == b[i].rmse);
    CHECK(a[i].mean_se == b[i].mean_se);
    CHECK(a[i].var_estimates == b[i].var_estimates);
  }
}

TEST_CASE("rmse decomposes into bias and variance on the aggregate scale") {
  ExperimentGrid g = small_grid();
  auto rows = run_grid(g, 1);
  for (const auto& row : rows) {
    // Recover the Monte Carlo truth the grid used from the reported bias.
    double tau = row.mean_estimate / (1.0 + row.percent_bias / 100.0);
    double bias = row.mean_estimate - tau;
    CHECK(std::abs(row.rmse * row.rmse - (bias * bias + row.var_estimates)) < 1e-10);
  }
}

TEST_CASE("relative efficiency definition and reference checks") {
  MetricsRow a;
  a.estimator = "oracle";
  a.var_estimates = 0.04;
  MetricsRow b = a;
  b.estimator = "cv";
  b.var_estimates = 0.08;
  std::vector<MetricsRow> rows = {a, b};
  relative_efficiency(rows, "oracle");
  CHECK(rows[0].relative_efficiency == doctest::Approx(1.0));
  CHECK(rows[1].relative_efficiency == doctest::Approx(0.5));
  CHECK_THROWS_AS(relative_efficiency(rows, "val"), MissingReference);
}

TEST_CASE("grid axes multiply into cells with one row per estimator") {
  ExperimentGrid g = small_grid();
  g.rho_values = {0.2, 0.4};
  g.sensitivity_values = {0.95, 0.8};
  g.replicates = 2;
  CHECK(g.cell_count() == 4);
  auto rows = run_grid(g, 1);
  CHECK(rows.size() == 4 * g.estimators.size());
}

TEST_CASE("misspecification helper swaps the intended libraries") {
  NuisanceConfig base;
  NuisanceConfig out = apply_misspecification(base, Misspecification::Outcome);
  REQUIRE(out.outcome_library.size() == 1);
  CHECK(out.outcome_library[0].kind == LearnerKind::GlmMainEffects);
  CHECK(out.propensity_library.size() == base.propensity_library.size());
  NuisanceConfig prop = apply_misspecification(base, Misspecification::Propensity);
  REQUIRE(prop.propensity_library.size() == 1);
  CHECK(prop.propensity_library[0].kind == LearnerKind::Mean);
}

TEST_CASE("oracle at desk scale is unbiased with near-nominal coverage") {
  ExperimentGrid g = small_grid();
  g.base.n = 2000;
  g.n_values = {2000};
  g.estimators = {"oracle"};
  g.replicates = 200;
  auto rows = run_grid(g, 1);
  REQUIRE(rows.size() == 1);
  CHECK(std::abs(rows[0].percent_bias) < 2.0);
  CHECK(rows[0].coverage >= 0.91);
  CHECK(rows[0].coverage <= 0.99);
  CHECK(rows[0].failures == 0);
}
