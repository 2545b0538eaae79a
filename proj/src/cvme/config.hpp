#ifndef CVME_CONFIG_HPP
#define CVME_CONFIG_HPP

#include <string>

#include "cvme/experiments.hpp"

namespace cvme {

// Per-run estimator settings parsed from the [estimate] section.
struct RunConfig {
  std::vector<std::string> estimators{"cv"};
  NuisanceConfig nuisance;
  Misspecification misspec = Misspecification::None;
  VarianceMethod variance_method = VarianceMethod::Influence;
  int bootstrap_b = 400;
  MiOptions mi;
  KappaModel kappa_model = KappaModel::Known;
  double level = 0.95;
};

// Everything a config file can carry. Commands use the parts they need;
// unknown sections or keys are rejected.
struct FullConfig {
  SimScenario scenario;
  RunConfig run;
  ExperimentGrid grid;          // base/nuisance mirrored from scenario/run
  std::string reference;        // relative-efficiency reference tag, "" = none
  int default_threads = 1;
  bool has_grid_section = false;
};

// Flat INI: `[section]` headers, `key = value` lines, `#` or `;` comments.
// Sections: [scenario], [estimate], [grid]. Throws ConfigError on unknown
// sections/keys, duplicate keys, or out-of-range values.
FullConfig load_config_text(const std::string& text);
FullConfig load_config_file(const std::string& path);
FullConfig default_config();

// Human-readable schema for --print-config-schema.
const char* config_schema();

}  // namespace cvme

#endif
