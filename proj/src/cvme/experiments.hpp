#ifndef CVME_EXPERIMENTS_HPP
#define CVME_EXPERIMENTS_HPP

#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "cvme/dgp.hpp"
#include "cvme/estimators.hpp"

namespace cvme {

enum class Misspecification { None, Outcome, Propensity };

const char* misspecification_name(Misspecification m);
Misspecification misspecification_from_name(const std::string& name);

// Known estimator tags accepted by the harness and the CLI:
//   cv, val, val_ep, main_ep, naive, oracle, val_only, mi_pmm,
//   ipsw_val, ipsw_cv.
bool is_known_estimator_tag(const std::string& tag);

// Degrade the nuisance libraries for the misspecification experiments:
// outcome -> main-effects GLM only (the generating outcome model has an
// exposure-by-covariate interaction), propensity -> mean learner only.
NuisanceConfig apply_misspecification(NuisanceConfig config, Misspecification misspec);

// Cartesian grid of scenario variations, run over independent replicates.
struct ExperimentGrid {
  SimScenario base;
  std::vector<double> rho_values;
  std::vector<double> sensitivity_values;
  std::vector<Eigen::Index> n_values;
  std::vector<SamplingMode> modes;
  std::vector<std::string> estimators;
  Misspecification misspec = Misspecification::None;
  int replicates = 500;
  std::uint64_t seed_root = 1;
  NuisanceConfig nuisance;
  MiOptions mi;
  KappaModel kappa_model = KappaModel::Known;
  double level = 0.95;
  std::uint64_t truth_draws = 2000000;

  std::size_t cell_count() const;
  void validate() const;  // throws ConfigError
};

// One aggregated row per (cell, estimator).
struct MetricsRow {
  double rho = 0.0;
  double sensitivity = 0.0;
  Eigen::Index n = 0;
  SamplingMode mode = SamplingMode::CompletelyRandom;
  std::string estimator;
  int replicate_count = 0;
  int failures = 0;
  bool flagged = false;  // failures above 2% of replicates
  double mean_estimate = 0.0;
  double percent_bias = 0.0;
  double coverage = 0.0;
  double rmse = 0.0;
  double mean_se = 0.0;
  double var_estimates = 0.0;  // population variance across replicates
  double relative_efficiency = std::numeric_limits<double>::quiet_NaN();
  double mc_se_percent_bias = 0.0;
  double mc_se_coverage = 0.0;
  double mc_se_rmse = 0.0;
  // Mean of the IPSW control variate itself; populated for ipsw_cv only.
  double mean_control_variate = std::numeric_limits<double>::quiet_NaN();
};

using ProgressSink = std::function<void(std::size_t completed, std::size_t total)>;

// Run every (cell, replicate) work item, then aggregate. Results are
// deterministic in seed_root regardless of `parallelism`: each item writes to
// a preallocated slot and aggregation folds in replicate order.
std::vector<MetricsRow> run_grid(const ExperimentGrid& grid, int parallelism,
                                 const ProgressSink& progress = nullptr);

// Fill relative_efficiency = var(reference) / var(estimator) per cell.
void relative_efficiency(std::vector<MetricsRow>& rows, const std::string& reference_tag);

}  // namespace cvme

#endif
