#include "cvme/config.hpp"

#include <map>
#include <set>
#include <sstream>

#include "cvme/csv.hpp"
#include "cvme/errors.hpp"

namespace cvme {

namespace {

using Section = std::map<std::string, std::string>;
using Ini = std::map<std::string, Section>;

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

Ini parse_ini(const std::string& text) {
  Ini out;
  std::string section;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t cut = std::min(line.find('#'), line.find(';'));
    std::string body = trim(cut == std::string::npos ? line : line.substr(0, cut));
    if (body.empty()) continue;
    if (body.front() == '[') {
      if (body.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(body.substr(1, body.size() - 2));
      if (section.empty())
        throw ConfigError("line " + std::to_string(lineno) + ": empty section name");
      out[section];  // allow empty sections
      continue;
    }
    std::size_t eq = body.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    std::string key = trim(body.substr(0, eq));
    std::string value = trim(body.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    if (section.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    if (!out[section].emplace(key, value).second)
      throw ConfigError("line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
  }
  return out;
}

// Wraps one section; every read marks the key used so leftovers can be
// rejected afterwards.
class Reader {
 public:
  Reader(const Section& s, std::string name) : section_(s), name_(std::move(name)) {}

  bool has(const std::string& key) const { return section_.count(key) > 0; }

  std::string raw(const std::string& key) {
    used_.insert(key);
    return section_.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    return parse_config_double(raw(key), key);
  }

  long long integer(const std::string& key, long long fallback) {
    if (!has(key)) return fallback;
    try {
      return parse_integer(raw(key), name_ + "." + key);
    } catch (const ParseError& e) {
      throw ConfigError(e.what());
    }
  }

  bool flag(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    std::string v = raw(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(name_ + "." + key + ": expected true/false, got '" + v + "'");
  }

  std::vector<std::string> words(const std::string& key) {
    std::vector<std::string> out;
    std::istringstream in(raw(key));
    std::string w;
    while (in >> w) out.push_back(w);
    if (out.empty()) throw ConfigError(name_ + "." + key + ": empty value");
    return out;
  }

  std::vector<double> numbers(const std::string& key, std::size_t expected = 0) {
    auto ws = words(key);
    std::vector<double> out;
    out.reserve(ws.size());
    for (const auto& w : ws) out.push_back(parse_config_double(w, key));
    if (expected > 0 && out.size() != expected)
      throw ConfigError(name_ + "." + key + ": expected " + std::to_string(expected) +
                        " values, got " + std::to_string(out.size()));
    return out;
  }

  void finish() const {
    for (const auto& [key, value] : section_)
      if (!used_.count(key)) throw ConfigError("unknown key '" + key + "' in [" + name_ + "]");
  }

 private:
  double parse_config_double(const std::string& text, const std::string& key) {
    try {
      return parse_double(text, name_ + "." + key);
    } catch (const ParseError& e) {
      throw ConfigError(e.what());
    }
  }

  const Section& section_;
  std::string name_;
  std::set<std::string> used_;
};

void read_scenario(Reader& r, SimScenario& s) {
  if (r.has("preset")) {
    std::string p = r.raw("preset");
    if (p == "default")
      s = default_scenario();
    else if (p == "vccc")
      s = vccc_like_scenario();
    else
      throw ConfigError("scenario.preset must be 'default' or 'vccc', got '" + p + "'");
  }
  s.n = r.integer("n", s.n);
  s.seed = static_cast<std::uint64_t>(r.integer("seed", static_cast<long long>(s.seed)));
  s.alpha0 = r.number("alpha0", s.alpha0);
  if (r.has("alpha")) {
    auto v = r.numbers("alpha", 3);
    s.alpha = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  s.sensitivity = r.number("sensitivity", s.sensitivity);
  if (r.has("specificity") && r.has("false_positive_rate"))
    throw ConfigError("give either scenario.specificity or scenario.false_positive_rate, not both");
  if (r.has("specificity")) s.false_positive_rate = 1.0 - r.number("specificity", 0.0);
  s.false_positive_rate = r.number("false_positive_rate", s.false_positive_rate);
  s.eta0 = r.number("eta0", s.eta0);
  if (r.has("eta")) {
    auto v = r.numbers("eta", 3);
    s.eta = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  s.rho = r.number("rho", s.rho);
  s.tau = r.number("tau", s.tau);
  s.beta0 = r.number("beta0", s.beta0);
  if (r.has("beta")) {
    auto v = r.numbers("beta", 3);
    s.beta = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  if (r.has("gamma")) {
    auto v = r.numbers("gamma", 3);
    s.gamma = Eigen::Vector3d(v[0], v[1], v[2]);
  }
  s.epsilon_sd = r.number("epsilon_sd", s.epsilon_sd);
  if (r.has("sigma_x")) {
    auto v = r.numbers("sigma_x", 9);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) s.sigma_x(i, j) = v[static_cast<std::size_t>(3 * i + j)];
  }
  if (r.has("sampling_mode")) s.sampling_mode = sampling_mode_from_name(r.raw("sampling_mode"));
  s.zeta_y = r.number("zeta_y", s.zeta_y);
  s.zeta_astar = r.number("zeta_astar", s.zeta_astar);
}

void read_estimate(Reader& r, RunConfig& run) {
  if (r.has("estimators")) {
    run.estimators = r.words("estimators");
    for (const auto& tag : run.estimators)
      if (!is_known_estimator_tag(tag)) throw ConfigError("unknown estimator tag: " + tag);
  }
  NuisanceConfig& nc = run.nuisance;
  nc.folds = static_cast<int>(r.integer("folds", nc.folds));
  if (nc.folds < 2) throw ConfigError("estimate.folds must be at least 2");
  nc.clip_lo = r.number("clip_lo", nc.clip_lo);
  nc.clip_hi = r.number("clip_hi", nc.clip_hi);
  if (!(nc.clip_lo > 0.0 && nc.clip_lo < nc.clip_hi && nc.clip_hi < 1.0))
    throw ConfigError("estimate clipping bounds must satisfy 0 < clip_lo < clip_hi < 1");
  nc.positivity_threshold = r.number("positivity_threshold", nc.positivity_threshold);
  if (!(nc.positivity_threshold > 0.0 && nc.positivity_threshold <= 1.0))
    throw ConfigError("estimate.positivity_threshold must lie in (0, 1]");
  nc.cross_fit = r.flag("cross_fit", nc.cross_fit);
  nc.reuse_main_ep_outcome = r.flag("reuse_main_ep_outcome", nc.reuse_main_ep_outcome);
  nc.seed = static_cast<std::uint64_t>(r.integer("seed", static_cast<long long>(nc.seed)));
  if (r.has("variance_method")) {
    std::string v = r.raw("variance_method");
    if (v == "influence")
      run.variance_method = VarianceMethod::Influence;
    else if (v == "bootstrap")
      run.variance_method = VarianceMethod::Bootstrap;
    else
      throw ConfigError("estimate.variance_method must be influence or bootstrap");
  }
  run.bootstrap_b = static_cast<int>(r.integer("bootstrap_b", run.bootstrap_b));
  if (run.bootstrap_b < 2) throw ConfigError("estimate.bootstrap_b must be at least 2");
  run.mi.imputations = static_cast<int>(r.integer("mi_imputations", run.mi.imputations));
  run.mi.donors = static_cast<int>(r.integer("mi_donors", run.mi.donors));
  if (run.mi.imputations < 1 || run.mi.donors < 1)
    throw ConfigError("estimate.mi_imputations and estimate.mi_donors must be positive");
  run.level = r.number("level", run.level);
  if (!(run.level > 0.0 && run.level < 1.0))
    throw ConfigError("estimate.level must lie in (0, 1)");
  if (r.has("kappa_model")) {
    std::string v = r.raw("kappa_model");
    if (v == "known")
      run.kappa_model = KappaModel::Known;
    else if (v == "estimated")
      run.kappa_model = KappaModel::Estimated;
    else
      throw ConfigError("estimate.kappa_model must be known or estimated");
  }
  if (r.has("misspec")) run.misspec = misspecification_from_name(r.raw("misspec"));
}

void read_grid(Reader& r, FullConfig& cfg) {
  ExperimentGrid& g = cfg.grid;
  if (r.has("rho")) g.rho_values = r.numbers("rho");
  if (r.has("sensitivity")) g.sensitivity_values = r.numbers("sensitivity");
  if (r.has("n")) {
    g.n_values.clear();
    for (double v : r.numbers("n")) g.n_values.push_back(static_cast<Eigen::Index>(v));
  }
  if (r.has("sampling_mode")) {
    g.modes.clear();
    for (const auto& w : r.words("sampling_mode")) g.modes.push_back(sampling_mode_from_name(w));
  }
  g.replicates = static_cast<int>(r.integer("replicates", g.replicates));
  g.seed_root =
      static_cast<std::uint64_t>(r.integer("seed_root", static_cast<long long>(g.seed_root)));
  g.truth_draws =
      static_cast<std::uint64_t>(r.integer("truth_draws", static_cast<long long>(g.truth_draws)));
  if (r.has("reference")) {
    cfg.reference = r.raw("reference");
    if (!is_known_estimator_tag(cfg.reference))
      throw ConfigError("grid.reference is not a known estimator tag: " + cfg.reference);
  }
  cfg.default_threads = static_cast<int>(r.integer("threads", cfg.default_threads));
  if (cfg.default_threads < 1) throw ConfigError("grid.threads must be positive");
}

}  // namespace

FullConfig default_config() {
  FullConfig cfg;
  cfg.scenario = default_scenario();
  return cfg;
}

FullConfig load_config_text(const std::string& text) {
  Ini ini = parse_ini(text);
  FullConfig cfg = default_config();
  for (const auto& [name, section] : ini) {
    if (name != "scenario" && name != "estimate" && name != "grid")
      throw ConfigError("unknown section [" + name + "]");
    (void)section;
  }
  if (ini.count("scenario")) {
    Reader r(ini.at("scenario"), "scenario");
    read_scenario(r, cfg.scenario);
    r.finish();
  }
  if (ini.count("estimate")) {
    Reader r(ini.at("estimate"), "estimate");
    read_estimate(r, cfg.run);
    r.finish();
  }

  // Grid defaults mirror the single scenario/run settings.
  cfg.grid.base = cfg.scenario;
  cfg.grid.rho_values = {cfg.scenario.rho};
  cfg.grid.sensitivity_values = {cfg.scenario.sensitivity};
  cfg.grid.n_values = {cfg.scenario.n};
  cfg.grid.modes = {cfg.scenario.sampling_mode};
  cfg.grid.estimators = cfg.run.estimators;
  cfg.grid.misspec = cfg.run.misspec;
  cfg.grid.nuisance = cfg.run.nuisance;
  cfg.grid.mi = cfg.run.mi;
  cfg.grid.kappa_model = cfg.run.kappa_model;
  cfg.grid.level = cfg.run.level;
  cfg.grid.seed_root = cfg.scenario.seed;
  if (ini.count("grid")) {
    cfg.has_grid_section = true;
    Reader r(ini.at("grid"), "grid");
    read_grid(r, cfg);
    r.finish();
  }
  return cfg;
}

FullConfig load_config_file(const std::string& path) {
  return load_config_text(read_text(path));
}

const char* config_schema() {
  return R"(Configuration file format: INI-style text. '#' and ';' start comments.
Unknown sections or keys are rejected. All sections and keys are optional;
defaults shown in parentheses.

[scenario]   data-generating process
  preset              = default | vccc          (default)
  n                   = integer > 0             (2000)
  seed                = integer                 (1)
  alpha0              = real                    (0.1)      exposure intercept
  alpha               = 3 reals                 (-0.5 0.3 0.85)
  sensitivity         = real in (0,1]           (0.95)     P(A*=1 | A=1)
  specificity         = real in (0,1]           (0.95)     1 - P(A*=1 | A=0)
  false_positive_rate = real in [0,1)           (0.05)     alternative to specificity
  eta0                = real                    (0)        selection intercept
  eta                 = 3 reals                 (0.1 -0.2 0.6)
  rho                 = real in (0,1]           (0.2)      target validation fraction
  tau                 = real                    (1)
  beta0               = real                    (0)
  beta                = 3 reals                 (1 -3 0.5)
  gamma               = 3 reals                 (0.2 0.4 -0.6)
  epsilon_sd          = real >= 0               (1)
  sigma_x             = 9 reals, row-major 3x3  (1 0.25 0.5 0.25 1 -0.4 0.5 -0.4 1)
  sampling_mode       = completely-random | covariate-dependent | complex-z-dependent
                                                (completely-random)
  zeta_y              = real                    (0.25)     complex-mode weight on Y
  zeta_astar          = real                    (0.25)     complex-mode weight on A*

[estimate]   estimator settings
  estimators          = list of: cv val val_ep main_ep naive oracle val_only
                        mi_pmm ipsw_val ipsw_cv (cv)
  folds               = integer >= 2            (10)
  clip_lo             = real                    (0.01)
  clip_hi             = real                    (0.99)
  positivity_threshold= real in (0,1]           (0.25)
  cross_fit           = true | false            (false)
  reuse_main_ep_outcome = true | false          (false)
  seed                = integer                 (1)        nuisance-fit streams
  variance_method     = influence | bootstrap   (influence)
  bootstrap_b         = integer >= 2            (400)
  mi_imputations      = integer >= 1            (10)
  mi_donors           = integer >= 1            (5)
  level               = real in (0,1)           (0.95)
  kappa_model         = known | estimated       (known)
  misspec             = none | outcome | propensity (none)

[grid]       simulation grid (simulate command)
  rho                 = list of reals           (scenario rho)
  sensitivity         = list of reals           (scenario sensitivity)
  n                   = list of integers        (scenario n)
  sampling_mode       = list of modes           (scenario sampling_mode)
  replicates          = integer >= 0            (500)
  seed_root           = integer                 (scenario seed)
  truth_draws         = integer                 (2000000)
  reference           = estimator tag           (none; fills relative efficiency)
  threads             = integer >= 1            (1)
)";
}

}  // namespace cvme
