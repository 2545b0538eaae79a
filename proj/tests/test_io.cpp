#include <cmath>
#include <cstdio>
#include <filesystem>

#include "cvme/config.hpp"
#include "cvme/csv.hpp"
#include "cvme/dgp.hpp"
#include "cvme/errors.hpp"
#include "doctest.h"

using namespace cvme;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("doubles survive a format/parse round trip bit-for-bit") {
  Rng rng(404);
  for (int i = 0; i < 1000; ++i) {
    double v = (rng.uniform() - 0.5) * std::pow(10.0, rng.below(12));
    double back = parse_double(format_double(v), "test");
    REQUIRE(back == v);
  }
  CHECK(parse_double(format_double(0.1), "t") == 0.1);
  CHECK_THROWS_AS(parse_double("12x", "t"), ParseError);
  CHECK_THROWS_AS(parse_double("", "t"), ParseError);
}

TEST_CASE("dataset csv round trip preserves every field exactly") {
  SimScenario s = default_scenario();
  s.n = 300;
  s.sampling_mode = SamplingMode::ComplexZDependent;
  GeneratedSample g = generate(s, 55);
  std::string path = temp_path("cvme_roundtrip.csv");
  write_dataset_csv(g, path, true);
  LoadedDataset back = read_dataset_csv(path);
  REQUIRE(back.has_oracle);
  CHECK((back.sample.data.y - g.data.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.sample.data.x - g.data.x).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.sample.data.a - g.data.a).cwiseAbs().maxCoeff() == 0);
  CHECK((back.sample.data.a_star - g.data.a_star).cwiseAbs().maxCoeff() == 0);
  REQUIRE(back.sample.data.kappa.has_value());
  CHECK((*back.sample.data.kappa - *g.data.kappa).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.sample.y0 - g.y0).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.sample.y1 - g.y1).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove(path);
}

TEST_CASE("dataset parse failures carry line numbers") {
  std::string path = temp_path("cvme_bad.csv");
  write_text_atomic(path, "y,a_star,s,a,x1\n1.5,0,1,1,0.2\n2.5,0,0,1,0.3\n");
  try {
    read_dataset_csv(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  write_text_atomic(path, "y,a_star,s,a,x1\n1.5,2,1,1,0.2\n");
  CHECK_THROWS_AS(read_dataset_csv(path), ParseError);
  write_text_atomic(path, "y,a_star,s,a\n1.5,0,1,1\n");
  CHECK_THROWS_AS(read_dataset_csv(path), ParseError);
  std::filesystem::remove(path);
}

TEST_CASE("atomic writes leave no temporary files behind") {
  std::string path = temp_path("cvme_atomic.txt");
  write_text_atomic(path, "hello\n");
  CHECK(read_text(path) == "hello\n");
  int leftovers = 0;
  for (const auto& entry : std::filesystem::directory_iterator(
           std::filesystem::temp_directory_path()))
    if (entry.path().filename().string().find("cvme_atomic.txt.tmp") == 0) ++leftovers;
  CHECK(leftovers == 0);
  std::filesystem::remove(path);
}

TEST_CASE("config defaults load and unknown keys are rejected") {
  FullConfig cfg = load_config_text("");
  CHECK(cfg.scenario.n == 2000);
  CHECK(cfg.run.estimators == std::vector<std::string>{"cv"});

  CHECK_THROWS_AS(load_config_text("[scenario]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(load_config_text("[nope]\nn = 1\n"), ConfigError);
  CHECK_THROWS_AS(load_config_text("[scenario]\nn = 5\nn = 6\n"), ConfigError);
  CHECK_THROWS_AS(load_config_text("n = 5\n"), ConfigError);  // key outside a section
  CHECK_THROWS_AS(load_config_text("[estimate]\nestimators = nope\n"), ConfigError);
  CHECK_THROWS_AS(load_config_text("[estimate]\nfolds = 1\n"), ConfigError);
  CHECK_THROWS_AS(load_config_text("[estimate]\nlevel = 1.5\n"), ConfigError);
}

TEST_CASE("config values reach the right places") {
  FullConfig cfg = load_config_text(
      "[scenario]\nn = 123\nrho = 0.4\nsensitivity = 0.8\nsampling_mode = covariate-dependent\n"
      "# comment\n"
      "[estimate]\nestimators = cv naive\nfolds = 5\nvariance_method = bootstrap\n"
      "bootstrap_b = 77\nmisspec = outcome\n"
      "[grid]\nrho = 0.1 0.3\nreplicates = 12\nreference = oracle\nthreads = 2\n");
  CHECK(cfg.scenario.n == 123);
  CHECK(cfg.scenario.rho == 0.4);
  CHECK(cfg.scenario.sampling_mode == SamplingMode::CovariateDependent);
  CHECK(cfg.run.estimators == std::vector<std::string>{"cv", "naive"});
  CHECK(cfg.run.nuisance.folds == 5);
  CHECK(cfg.run.variance_method == VarianceMethod::Bootstrap);
  CHECK(cfg.run.bootstrap_b == 77);
  CHECK(cfg.run.misspec == Misspecification::Outcome);
  CHECK(cfg.grid.rho_values == std::vector<double>{0.1, 0.3});
  CHECK(cfg.grid.sensitivity_values == std::vector<double>{0.8});  // mirrored from scenario
  CHECK(cfg.grid.replicates == 12);
  CHECK(cfg.reference == "oracle");
  CHECK(cfg.default_threads == 2);
  CHECK(cfg.grid.misspec == Misspecification::Outcome);
}

TEST_CASE("specificity and false positive rate are mutually exclusive spellings") {
  FullConfig a = load_config_text("[scenario]\nspecificity = 0.9\n");
  CHECK(a.scenario.false_positive_rate == doctest::Approx(0.1));
  FullConfig b = load_config_text("[scenario]\nfalse_positive_rate = 0.42\n");
  CHECK(b.scenario.false_positive_rate == doctest::Approx(0.42));
  CHECK_THROWS_AS(
      load_config_text("[scenario]\nspecificity = 0.9\nfalse_positive_rate = 0.1\n"),
      ConfigError);
}

TEST_CASE("vccc preset is reachable from config") {
  FullConfig cfg = load_config_text("[scenario]\npreset = vccc\nn = 50\n");
  CHECK(cfg.scenario.sensitivity == doctest::Approx(0.969));
  CHECK(cfg.scenario.false_positive_rate == doctest::Approx(0.42));
  CHECK(cfg.scenario.n == 50);
  CHECK_THROWS_AS(load_config_text("[scenario]\npreset = huh\n"), ConfigError);
}

TEST_CASE("schema text mentions every section") {
  std::string schema = config_schema();
  CHECK(schema.find("[scenario]") != std::string::npos);
  CHECK(schema.find("[estimate]") != std::string::npos);
  CHECK(schema.find("[grid]") != std::string::npos);
  CHECK(schema.find("estimators") != std::string::npos);
}

TEST_CASE("results csv lists one row per record with diagnostics") {
  ResultRecord r;
  r.tag = "cv";
  r.estimate = 1.25;
  r.se = 0.5;
  r.ci_low = 0.27;
  r.ci_high = 2.23;
  r.diagnostics["b_hat"] = 0.75;
  std::string text = results_to_csv({r});
  CHECK(text.find("estimator,estimate,se,ci_low,ci_high,diagnostics\n") == 0);
  CHECK(text.find("cv,1.25,0.5,0.27,2.23,b_hat=0.75\n") != std::string::npos);
}
