#include "cvme/experiments.hpp"

#include <atomic>
#include <numeric>
#include <cmath>
#include <mutex>
#include <thread>

#include "cvme/errors.hpp"

namespace cvme {

const char* misspecification_name(Misspecification m) {
  switch (m) {
    case Misspecification::None:
      return "none";
    case Misspecification::Outcome:
      return "outcome";
    case Misspecification::Propensity:
      return "propensity";
  }
  return "?";
}

Misspecification misspecification_from_name(const std::string& name) {
  if (name == "none") return Misspecification::None;
  if (name == "outcome") return Misspecification::Outcome;
  if (name == "propensity") return Misspecification::Propensity;
  throw ConfigError("unknown misspecification: " + name);
}

bool is_known_estimator_tag(const std::string& tag) {
  static const std::vector<std::string> known = {"cv",       "val",    "val_ep", "main_ep",
                                                 "naive",    "oracle", "val_only",
                                                 "mi_pmm",   "ipsw_val", "ipsw_cv"};
  for (const auto& k : known)
    if (k == tag) return true;
  return false;
}

NuisanceConfig apply_misspecification(NuisanceConfig config, Misspecification misspec) {
  switch (misspec) {
    case Misspecification::None:
      break;
    case Misspecification::Outcome:
      config.outcome_library = {LearnerSpec{LearnerKind::GlmMainEffects}};
      break;
    case Misspecification::Propensity:
      config.propensity_library = {LearnerSpec{LearnerKind::Mean}};
      break;
  }
  return config;
}

std::size_t ExperimentGrid::cell_count() const {
  return rho_values.size() * sensitivity_values.size() * n_values.size() * modes.size();
}

void ExperimentGrid::validate() const {
  if (estimators.empty()) throw ConfigError("estimator set is empty");
  for (const auto& tag : estimators)
    if (!is_known_estimator_tag(tag)) throw ConfigError("unknown estimator tag: " + tag);
  if (rho_values.empty() || sensitivity_values.empty() || n_values.empty() || modes.empty())
    throw ConfigError("every grid axis needs at least one value");
  if (replicates < 0) throw ConfigError("replicates must be non-negative");
  base.validate();
}

namespace {

struct ReplicateResult {
  bool ok = false;
  double estimate = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double control_variate = std::numeric_limits<double>::quiet_NaN();
};

NuisanceConfig cell_nuisance(const ExperimentGrid& grid, std::uint64_t seed) {
  NuisanceConfig cfg = apply_misspecification(grid.nuisance, grid.misspec);
  cfg.seed = seed;
  return cfg;
}

// Lazily computed shared component reports; a failed component is remembered
// so each dependent estimator fails once rather than refitting.
struct SharedReports {
  enum class State { Unset, Ready, Failed };
  State state_val = State::Unset, state_val_ep = State::Unset, state_main_ep = State::Unset;
  EstimateReport val, val_ep, main_ep;
};

const EstimateReport& shared(SharedReports::State& state, EstimateReport& slot,
                             const std::function<EstimateReport()>& compute) {
  if (state == SharedReports::State::Unset) {
    try {
      slot = compute();
      state = SharedReports::State::Ready;
    } catch (...) {
      state = SharedReports::State::Failed;
      throw;
    }
  }
  if (state == SharedReports::State::Failed) throw NonConvergence("shared component fit failed");
  return slot;
}

void run_replicate(const ExperimentGrid& grid, const SimScenario& scn, std::uint64_t gen_seed,
                   std::uint64_t fit_seed, ReplicateResult* out) {
  GeneratedSample sample;
  try {
    sample = generate(scn, gen_seed);
  } catch (const Error&) {
    return;  // every estimator slot stays failed
  }
  const TwoPhaseDataset& data = sample.data;
  NuisanceConfig cfg = cell_nuisance(grid, fit_seed);
  SharedReports sh;
  auto get_val = [&]() -> const EstimateReport& {
    return shared(sh.state_val, sh.val,
                  [&] { return estimate_generalization(data, ExposureSource::Validated, cfg); });
  };
  auto get_val_ep = [&]() -> const EstimateReport& {
    return shared(sh.state_val_ep, sh.val_ep,
                  [&] { return estimate_generalization(data, ExposureSource::ErrorProne, cfg); });
  };
  auto get_main_ep = [&]() -> const EstimateReport& {
    return shared(sh.state_main_ep, sh.main_ep, [&] { return estimate_aipw_main_ep(data, cfg); });
  };

  for (std::size_t e = 0; e < grid.estimators.size(); ++e) {
    const std::string& tag = grid.estimators[e];
    ReplicateResult& r = out[e];
    try {
      if (tag == "cv") {
        CvMoments m = influence_moments(get_val(), get_val_ep(), get_main_ep());
        ControlVariateReport cr = combine_control_variates(get_val(), get_val_ep(), get_main_ep(),
                                                           m, VarianceMethod::Influence, grid.level);
        r = {true, cr.tau_cv, cr.se, cr.ci_low, cr.ci_high,
             std::numeric_limits<double>::quiet_NaN()};
      } else if (tag == "ipsw_cv") {
        EstimateReport iv = estimate_ipsw_val(data, grid.kappa_model, cfg);
        EstimateReport ic = estimate_ipsw_control_variate(data, grid.kappa_model, cfg);
        ControlVariateReport cr = combine_ipsw_control_variates(iv, ic, grid.level);
        r = {true, cr.tau_cv, cr.se, cr.ci_low, cr.ci_high, ic.estimate};
      } else {
        EstimateReport rep;
        if (tag == "val") rep = get_val();
        else if (tag == "val_ep") rep = get_val_ep();
        else if (tag == "main_ep") rep = get_main_ep();
        else if (tag == "naive") rep = estimate_naive(data, cfg);
        else if (tag == "oracle") rep = estimate_oracle(sample, cfg);
        else if (tag == "val_only") rep = estimate_validation_only(data, cfg);
        else if (tag == "mi_pmm") rep = estimate_mi_pmm(data, grid.mi, cfg);
        else if (tag == "ipsw_val") rep = estimate_ipsw_val(data, grid.kappa_model, cfg);
        auto ci = confidence_interval(rep, grid.level);
        r = {true, rep.estimate, rep.se, ci.first, ci.second,
             std::numeric_limits<double>::quiet_NaN()};
      }
    } catch (const Error&) {
      r.ok = false;
    }
  }
}

double population_variance(const std::vector<double>& v, double mean) {
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::vector<MetricsRow> run_grid(const ExperimentGrid& grid, int parallelism,
                                 const ProgressSink& progress) {
  grid.validate();
  if (grid.replicates == 0) return {};

  struct Cell {
    double rho;
    double sensitivity;
    Eigen::Index n;
    SamplingMode mode;
  };
  std::vector<Cell> cells;
  for (SamplingMode mode : grid.modes)
    for (Eigen::Index n : grid.n_values)
      for (double sens : grid.sensitivity_values)
        for (double rho : grid.rho_values) cells.push_back({rho, sens, n, mode});

  const std::size_t n_est = grid.estimators.size();
  const auto reps = static_cast<std::size_t>(grid.replicates);
  const std::size_t items = cells.size() * reps;
  // slot layout: [cell][replicate][estimator]
  std::vector<ReplicateResult> slots(items * n_est);

  Rng root(grid.seed_root);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mu;

  auto worker = [&] {
    for (;;) {
      std::size_t item = next.fetch_add(1);
      if (item >= items) return;
      std::size_t c = item / reps;
      std::size_t rep = item % reps;
      SimScenario scn = grid.base;
      scn.rho = cells[c].rho;
      scn.sensitivity = cells[c].sensitivity;
      scn.n = cells[c].n;
      scn.sampling_mode = cells[c].mode;
      Rng item_rng = root.child(c).child(rep);
      std::uint64_t gen_seed = item_rng.child(1).stream_id();
      std::uint64_t fit_seed = item_rng.child(2).stream_id();
      run_replicate(grid, scn, gen_seed, fit_seed, &slots[(c * reps + rep) * n_est]);
      std::size_t d = done.fetch_add(1) + 1;
      if (progress) {
        std::lock_guard<std::mutex> lock(progress_mu);
        progress(d, items);
      }
    }
  };
  int workers = std::max(1, parallelism);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  const double tau_true = true_tate(grid.base, grid.truth_draws).value;

  std::vector<MetricsRow> rows;
  rows.reserve(cells.size() * n_est);
  for (std::size_t c = 0; c < cells.size(); ++c) {
    for (std::size_t e = 0; e < n_est; ++e) {
      MetricsRow row;
      row.rho = cells[c].rho;
      row.sensitivity = cells[c].sensitivity;
      row.n = cells[c].n;
      row.mode = cells[c].mode;
      row.estimator = grid.estimators[e];

      std::vector<double> est, se, sqerr, cvs;
      int covered = 0;
      for (std::size_t rep = 0; rep < reps; ++rep) {
        const ReplicateResult& r = slots[(c * reps + rep) * n_est + e];
        if (!r.ok) {
          ++row.failures;
          continue;
        }
        est.push_back(r.estimate);
        se.push_back(r.se);
        sqerr.push_back((r.estimate - tau_true) * (r.estimate - tau_true));
        if (r.ci_low <= tau_true && tau_true <= r.ci_high) ++covered;
        if (std::isfinite(r.control_variate)) cvs.push_back(r.control_variate);
      }
      row.replicate_count = static_cast<int>(est.size());
      row.flagged = row.failures > grid.replicates / 50;
      if (!est.empty()) {
        const auto R = static_cast<double>(est.size());
        row.mean_estimate = std::accumulate(est.begin(), est.end(), 0.0) / R;
        row.mean_se = std::accumulate(se.begin(), se.end(), 0.0) / R;
        row.var_estimates = population_variance(est, row.mean_estimate);
        row.percent_bias = 100.0 * (row.mean_estimate - tau_true) / tau_true;
        row.coverage = static_cast<double>(covered) / R;
        double mse = std::accumulate(sqerr.begin(), sqerr.end(), 0.0) / R;
        row.rmse = std::sqrt(mse);
        row.mc_se_percent_bias =
            100.0 * std::sqrt(row.var_estimates / R) / std::abs(tau_true);
        row.mc_se_coverage = std::sqrt(row.coverage * (1.0 - row.coverage) / R);
        double var_sqerr = population_variance(sqerr, mse);
        row.mc_se_rmse = row.rmse > 0.0 ? std::sqrt(var_sqerr / R) / (2.0 * row.rmse) : 0.0;
        if (!cvs.empty())
          row.mean_control_variate =
              std::accumulate(cvs.begin(), cvs.end(), 0.0) / static_cast<double>(cvs.size());
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

void relative_efficiency(std::vector<MetricsRow>& rows, const std::string& reference_tag) {
  auto same_cell = [](const MetricsRow& a, const MetricsRow& b) {
    return a.rho == b.rho && a.sensitivity == b.sensitivity && a.n == b.n && a.mode == b.mode;
  };
  for (auto& row : rows) {
    const MetricsRow* ref = nullptr;
    for (const auto& cand : rows)
      if (cand.estimator == reference_tag && same_cell(cand, row)) {
        ref = &cand;
        break;
      }
    if (!ref) throw MissingReference("reference estimator absent from cell: " + reference_tag);
    row.relative_efficiency =
        row.var_estimates > 0.0 ? ref->var_estimates / row.var_estimates
                                : std::numeric_limits<double>::quiet_NaN();
  }
}

}  // namespace cvme
