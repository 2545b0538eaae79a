#include "cvme/cvme.h"

#include <chrono>
#include <cstring>
#include "json.hpp"
#include <string>

#include "cvme/config.hpp"
#include "cvme/csv.hpp"
#include "cvme/errors.hpp"

struct cvme_config {
  cvme::FullConfig cfg;
};

struct cvme_dataset {
  cvme::LoadedDataset data;
};

struct cvme_results {
  std::vector<cvme::ResultRecord> records;
};

namespace {

thread_local std::string g_last_error;

void set_error(const std::string& message) { g_last_error = message; }

int status_of(const std::exception& e) {
  if (dynamic_cast<const cvme::ParseError*>(&e)) return CVME_ERR_PARSE;
  if (dynamic_cast<const cvme::ConfigError*>(&e)) return CVME_ERR_CONFIG;
  if (dynamic_cast<const cvme::InvalidScenario*>(&e)) return CVME_ERR_CONFIG;
  if (dynamic_cast<const cvme::IoError*>(&e)) return CVME_ERR_IO;
  return CVME_ERR_ESTIMATION;
}

template <typename F>
int guarded(F&& f) {
  try {
    f();
    return CVME_OK;
  } catch (const std::exception& e) {
    set_error(e.what());
    return status_of(e);
  } catch (...) {
    set_error("unknown error");
    return CVME_ERR_ESTIMATION;
  }
}

char* copy_string(const std::string& s) {
  char* out = new char[s.size() + 1];
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::vector<cvme::ResultRecord> run_estimators(const cvme::LoadedDataset& loaded,
                                               const cvme::FullConfig& full) {
  using namespace cvme;
  const TwoPhaseDataset& data = loaded.sample.data;
  const RunConfig& run = full.run;
  NuisanceConfig cfg = apply_misspecification(run.nuisance, run.misspec);

  std::vector<ResultRecord> records;
  std::optional<EstimateReport> val, val_ep, main_ep;
  auto get_val = [&]() -> const EstimateReport& {
    if (!val) val = estimate_generalization(data, ExposureSource::Validated, cfg);
    return *val;
  };
  auto get_val_ep = [&]() -> const EstimateReport& {
    if (!val_ep) val_ep = estimate_generalization(data, ExposureSource::ErrorProne, cfg);
    return *val_ep;
  };
  auto get_main_ep = [&]() -> const EstimateReport& {
    if (!main_ep) main_ep = estimate_aipw_main_ep(data, cfg);
    return *main_ep;
  };

  for (const std::string& tag : run.estimators) {
    ResultRecord rec;
    rec.tag = tag;
    if (tag == "cv") {
      CvMoments m = run.variance_method == VarianceMethod::Bootstrap
                        ? bootstrap_gamma_v(data, cfg, run.bootstrap_b, Rng(cfg.seed))
                        : influence_moments(get_val(), get_val_ep(), get_main_ep());
      ControlVariateReport cr = combine_control_variates(get_val(), get_val_ep(), get_main_ep(),
                                                         m, run.variance_method, run.level);
      rec.estimate = cr.tau_cv;
      rec.se = cr.se;
      rec.ci_low = cr.ci_low;
      rec.ci_high = cr.ci_high;
      rec.diagnostics["tau_val"] = cr.tau_val;
      rec.diagnostics["tau_val_ep"] = cr.tau_val_ep;
      rec.diagnostics["tau_main_ep"] = cr.tau_main_ep;
      rec.diagnostics["v_hat"] = cr.v_hat;
      rec.diagnostics["gamma_hat"] = cr.gamma_hat;
      rec.diagnostics["v_big_hat"] = cr.v_big_hat;
      rec.diagnostics["b_hat"] = cr.b_hat;
      rec.diagnostics["degenerate_cv"] = cr.degenerate_cv ? 1.0 : 0.0;
      if (run.variance_method == VarianceMethod::Bootstrap)
        rec.diagnostics["bootstrap_dropped"] = cr.bootstrap_dropped;
    } else if (tag == "ipsw_cv") {
      EstimateReport iv = estimate_ipsw_val(data, run.kappa_model, cfg);
      EstimateReport ic = estimate_ipsw_control_variate(data, run.kappa_model, cfg);
      ControlVariateReport cr = combine_ipsw_control_variates(iv, ic, run.level);
      rec.estimate = cr.tau_cv;
      rec.se = cr.se;
      rec.ci_low = cr.ci_low;
      rec.ci_high = cr.ci_high;
      rec.diagnostics["tau_ipsw_val"] = cr.tau_val;
      rec.diagnostics["control_variate"] = cr.tau_val_ep;
      rec.diagnostics["b_hat"] = cr.b_hat;
      rec.diagnostics["degenerate_cv"] = cr.degenerate_cv ? 1.0 : 0.0;
    } else {
      EstimateReport rep;
      if (tag == "val") rep = get_val();
      else if (tag == "val_ep") rep = get_val_ep();
      else if (tag == "main_ep") rep = get_main_ep();
      else if (tag == "naive") rep = estimate_naive(data, cfg);
      else if (tag == "val_only") rep = estimate_validation_only(data, cfg);
      else if (tag == "mi_pmm") rep = estimate_mi_pmm(data, run.mi, cfg);
      else if (tag == "ipsw_val") rep = estimate_ipsw_val(data, run.kappa_model, cfg);
      else if (tag == "oracle") {
        if (!loaded.has_oracle)
          throw MissingReference("oracle estimator needs the generator columns (a_full, ...)");
        rep = estimate_oracle(loaded.sample, cfg);
      }
      auto ci = confidence_interval(rep, run.level);
      rec.estimate = rep.estimate;
      rec.se = rep.se;
      rec.ci_low = ci.first;
      rec.ci_high = ci.second;
      rec.diagnostics = rep.diagnostics;
    }
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace

extern "C" {

const char* cvme_version(void) { return "1.0.0"; }

const char* cvme_last_error(void) { return g_last_error.c_str(); }

const char* cvme_config_schema(void) { return cvme::config_schema(); }

void cvme_string_free(char* s) { delete[] s; }

int cvme_config_default(cvme_config** out) {
  return guarded([&] { *out = new cvme_config{cvme::default_config()}; });
}

int cvme_config_load(const char* path, cvme_config** out) {
  return guarded([&] { *out = new cvme_config{cvme::load_config_file(path)}; });
}

int cvme_config_load_text(const char* text, cvme_config** out) {
  return guarded([&] { *out = new cvme_config{cvme::load_config_text(text)}; });
}

int cvme_config_set_seed(cvme_config* config, uint64_t seed) {
  return guarded([&] {
    config->cfg.scenario.seed = seed;
    config->cfg.grid.base.seed = seed;
    config->cfg.run.nuisance.seed = seed;
    config->cfg.grid.nuisance.seed = seed;
    config->cfg.grid.seed_root = seed;
  });
}

int cvme_config_threads(const cvme_config* config) { return config->cfg.default_threads; }

void cvme_config_free(cvme_config* config) { delete config; }

int cvme_generate(const cvme_config* config, cvme_dataset** out) {
  return guarded([&] {
    cvme::LoadedDataset loaded;
    loaded.sample = cvme::generate(config->cfg.scenario, config->cfg.scenario.seed);
    loaded.has_oracle = true;
    *out = new cvme_dataset{std::move(loaded)};
  });
}

int cvme_dataset_read_csv(const char* path, cvme_dataset** out) {
  return guarded([&] { *out = new cvme_dataset{cvme::read_dataset_csv(path)}; });
}

int cvme_dataset_write_csv(const cvme_dataset* data, const char* path, int include_oracle) {
  return guarded([&] {
    if (include_oracle && !data->data.has_oracle)
      throw cvme::IoError("dataset carries no generator columns to export");
    cvme::write_dataset_csv(data->data.sample, path, include_oracle != 0);
  });
}

int64_t cvme_dataset_rows(const cvme_dataset* data) { return data->data.sample.data.n(); }

int64_t cvme_dataset_validated_rows(const cvme_dataset* data) {
  return data->data.sample.data.n_val();
}

int cvme_dataset_has_oracle(const cvme_dataset* data) { return data->data.has_oracle ? 1 : 0; }

void cvme_dataset_free(cvme_dataset* data) { delete data; }

int cvme_estimate(const cvme_dataset* data, const cvme_config* config, cvme_results** out) {
  return guarded([&] { *out = new cvme_results{run_estimators(data->data, config->cfg)}; });
}

int cvme_results_count(const cvme_results* results) {
  return static_cast<int>(results->records.size());
}

const char* cvme_results_tag(const cvme_results* results, int index) {
  return results->records.at(static_cast<std::size_t>(index)).tag.c_str();
}

double cvme_results_estimate(const cvme_results* results, int index) {
  return results->records.at(static_cast<std::size_t>(index)).estimate;
}

double cvme_results_se(const cvme_results* results, int index) {
  return results->records.at(static_cast<std::size_t>(index)).se;
}

double cvme_results_ci_low(const cvme_results* results, int index) {
  return results->records.at(static_cast<std::size_t>(index)).ci_low;
}

double cvme_results_ci_high(const cvme_results* results, int index) {
  return results->records.at(static_cast<std::size_t>(index)).ci_high;
}

int cvme_results_to_csv(const cvme_results* results, char** out) {
  return guarded([&] { *out = copy_string(cvme::results_to_csv(results->records)); });
}

int cvme_results_write_csv(const cvme_results* results, const char* path) {
  return guarded([&] { cvme::write_text_atomic(path, cvme::results_to_csv(results->records)); });
}

void cvme_results_free(cvme_results* results) { delete results; }

int cvme_simulate(const cvme_config* config, int threads, const char* metrics_csv_path,
                  const char* manifest_json_path,
                  void (*progress)(uint64_t completed, uint64_t total)) {
  return guarded([&] {
    using nlohmann::json;
    const cvme::ExperimentGrid& grid = config->cfg.grid;
    cvme::ProgressSink sink;
    if (progress)
      sink = [progress](std::size_t done, std::size_t total) {
        progress(static_cast<uint64_t>(done), static_cast<uint64_t>(total));
      };
    auto start = std::chrono::steady_clock::now();
    std::vector<cvme::MetricsRow> rows = cvme::run_grid(grid, threads, sink);
    if (!config->cfg.reference.empty())
      cvme::relative_efficiency(rows, config->cfg.reference);
    double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    cvme::write_text_atomic(metrics_csv_path, cvme::metrics_to_csv(rows));

    json manifest;
    manifest["version"] = cvme_version();
    manifest["seed_root"] = grid.seed_root;
    manifest["replicates"] = grid.replicates;
    manifest["estimators"] = grid.estimators;
    manifest["axes"]["rho"] = grid.rho_values;
    manifest["axes"]["sensitivity"] = grid.sensitivity_values;
    std::vector<long long> ns;
    for (Eigen::Index n : grid.n_values) ns.push_back(n);
    manifest["axes"]["n"] = ns;
    std::vector<std::string> modes;
    for (cvme::SamplingMode m : grid.modes) modes.push_back(cvme::sampling_mode_name(m));
    manifest["axes"]["sampling_mode"] = modes;
    manifest["misspecification"] = cvme::misspecification_name(grid.misspec);
    manifest["kappa_model"] = grid.kappa_model == cvme::KappaModel::Known ? "known" : "estimated";
    manifest["confidence_level"] = grid.level;
    manifest["folds"] = grid.nuisance.folds;
    manifest["clip"] = {grid.nuisance.clip_lo, grid.nuisance.clip_hi};
    manifest["mi"] = {{"imputations", grid.mi.imputations},
                      {"donors", grid.mi.donors},
                      {"interval", "t with Barnard-Rubin degrees of freedom"}};
    manifest["reference"] = config->cfg.reference;
    manifest["threads"] = threads;
    manifest["deterministic_in_threads"] = true;
    manifest["elapsed_seconds"] = seconds;
    manifest["rng"] = "mt19937_64 engine, SplitMix64-derived substreams";
    int total_failures = 0;
    std::vector<json> flagged;
    for (const auto& row : rows) {
      total_failures += row.failures;
      if (row.flagged)
        flagged.push_back({{"estimator", row.estimator},
                           {"rho", row.rho},
                           {"sensitivity", row.sensitivity},
                           {"n", row.n},
                           {"sampling_mode", cvme::sampling_mode_name(row.mode)},
                           {"failures", row.failures}});
    }
    manifest["failures"] = {{"total", total_failures}, {"flagged_cells", flagged}};
    cvme::write_text_atomic(manifest_json_path, manifest.dump(2) + "\n");
  });
}

int cvme_benchmark(const cvme_config* config, int threads, char** report) {
  return guarded([&] {
    // Fixed small grids timed with the configured estimator settings.
    cvme::ExperimentGrid grid = config->cfg.grid;
    grid.estimators = {"cv", "naive"};
    grid.misspec = cvme::Misspecification::None;
    grid.replicates = 10;
    grid.truth_draws = 100000;
    std::string text = "benchmark: 10 replicates per case, estimators cv+naive, threads=" +
                       std::to_string(threads) + "\n";
    for (Eigen::Index n : {Eigen::Index{500}, Eigen::Index{2000}}) {
      grid.n_values = {n};
      auto start = std::chrono::steady_clock::now();
      cvme::run_grid(grid, threads, nullptr);
      double seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      text += "n=" + std::to_string(n) + ": " + cvme::format_double(seconds) + " s total, " +
              cvme::format_double(seconds / 10.0 * 1000.0) + " ms per replicate\n";
    }
    *report = copy_string(text);
  });
}

}  // extern "C"
