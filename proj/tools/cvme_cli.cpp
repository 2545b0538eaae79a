// Command-line front end; talks to the library exclusively through the C API.
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>

#include "CLI11.hpp"
#include "cvme/cvme.h"

namespace {

int fail(int status) {
  std::fprintf(stderr, "error: %s\n", cvme_last_error());
  return status;
}

struct ConfigHandle {
  cvme_config* ptr = nullptr;
  ~ConfigHandle() { cvme_config_free(ptr); }
};

struct DatasetHandle {
  cvme_dataset* ptr = nullptr;
  ~DatasetHandle() { cvme_dataset_free(ptr); }
};

struct ResultsHandle {
  cvme_results* ptr = nullptr;
  ~ResultsHandle() { cvme_results_free(ptr); }
};

int load_config(const std::string& path, bool seed_given, std::uint64_t seed, ConfigHandle& out) {
  int rc = path.empty() ? cvme_config_default(&out.ptr) : cvme_config_load(path.c_str(), &out.ptr);
  if (rc != CVME_OK) return rc;
  if (seed_given) return cvme_config_set_seed(out.ptr, seed);
  return CVME_OK;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Control-variates treatment effect estimation for error-prone exposures"};
  app.require_subcommand(0, 1);

  bool print_schema = false;
  app.add_flag("--print-config-schema", print_schema, "Print the config file schema and exit");

  std::string config_path, out_path, data_path;
  std::uint64_t seed = 0;
  bool seed_given = false;
  int threads = 0;
  bool include_oracle = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "Config file (INI)");
    cmd->add_option("--seed", seed, "Seed override")->each([&](const std::string&) {
      seed_given = true;
    });
  };

  CLI::App* generate = app.add_subcommand("generate", "Generate a synthetic dataset CSV");
  add_common(generate);
  generate->add_option("--out", out_path, "Output CSV path")->required();
  generate->add_flag("--include-oracle", include_oracle,
                     "Also export the generator columns (a_full, y0, y1, kappa_true)");

  CLI::App* estimate = app.add_subcommand("estimate", "Run estimators on a dataset CSV");
  add_common(estimate);
  estimate->add_option("data", data_path, "Dataset CSV path")->required();
  estimate->add_option("--out", out_path, "Results CSV path (default: stdout)");

  CLI::App* simulate = app.add_subcommand("simulate", "Run a Monte Carlo grid");
  add_common(simulate);
  simulate->add_option("--out", out_path, "Metrics CSV path (manifest written alongside)")
      ->required();
  simulate->add_option("--threads", threads, "Worker threads (results identical for any value)");

  CLI::App* benchmark = app.add_subcommand("benchmark", "Time fixed reference grids");
  add_common(benchmark);
  benchmark->add_option("--threads", threads, "Worker threads");

  CLI11_PARSE(app, argc, argv);

  if (print_schema) {
    std::fputs(cvme_config_schema(), stdout);
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::fputs(app.help().c_str(), stderr);
    return 1;
  }

  ConfigHandle config;
  if (int rc = load_config(config_path, seed_given, seed, config); rc != CVME_OK) return fail(rc);
  if (threads <= 0) threads = cvme_config_threads(config.ptr);

  if (generate->parsed()) {
    DatasetHandle data;
    if (int rc = cvme_generate(config.ptr, &data.ptr); rc != CVME_OK) return fail(rc);
    if (int rc = cvme_dataset_write_csv(data.ptr, out_path.c_str(), include_oracle ? 1 : 0);
        rc != CVME_OK)
      return fail(rc);
    std::fprintf(stderr, "wrote %lld rows to %s\n",
                 static_cast<long long>(cvme_dataset_rows(data.ptr)), out_path.c_str());
    return 0;
  }

  if (estimate->parsed()) {
    DatasetHandle data;
    if (int rc = cvme_dataset_read_csv(data_path.c_str(), &data.ptr); rc != CVME_OK)
      return fail(rc);
    ResultsHandle results;
    if (int rc = cvme_estimate(data.ptr, config.ptr, &results.ptr); rc != CVME_OK)
      return fail(rc);
    if (out_path.empty()) {
      char* text = nullptr;
      if (int rc = cvme_results_to_csv(results.ptr, &text); rc != CVME_OK) return fail(rc);
      std::fputs(text, stdout);
      cvme_string_free(text);
    } else if (int rc = cvme_results_write_csv(results.ptr, out_path.c_str()); rc != CVME_OK) {
      return fail(rc);
    }
    return 0;
  }

  if (simulate->parsed()) {
    std::string manifest = out_path + ".manifest.json";
    auto progress = [](uint64_t done, uint64_t total) {
      if (done % 50 == 0 || done == total)
        std::fprintf(stderr, "\rreplicates: %llu/%llu", static_cast<unsigned long long>(done),
                     static_cast<unsigned long long>(total));
      if (done == total) std::fputc('\n', stderr);
    };
    if (int rc = cvme_simulate(config.ptr, threads, out_path.c_str(), manifest.c_str(), progress);
        rc != CVME_OK)
      return fail(rc);
    return 0;
  }

  if (benchmark->parsed()) {
    char* report = nullptr;
    if (int rc = cvme_benchmark(config.ptr, threads, &report); rc != CVME_OK) return fail(rc);
    std::fputs(report, stdout);
    cvme_string_free(report);
    return 0;
  }

  return 0;
}
