#include "cvme/estimators.hpp"

#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <utility>

#include "cvme/errors.hpp"

namespace cvme {

namespace {

// Fold-assignment substream ids, keyed by nuisance role. Validation-side
// error-prone fits share the ids of their error-free counterparts so that
// identical inputs produce bit-identical fits.
constexpr std::uint64_t kStreamValOutcome = 10;
constexpr std::uint64_t kStreamValPropensity = 11;
constexpr std::uint64_t kStreamKappa = 12;
constexpr std::uint64_t kStreamMainOutcome = 13;
constexpr std::uint64_t kStreamMainPropensity = 14;
constexpr std::uint64_t kStreamIpswOutcome = 17;
constexpr std::uint64_t kStreamIpswPropensity = 18;
constexpr std::uint64_t kStreamKappaZ = 19;
constexpr std::uint64_t kStreamMi = 20;
constexpr std::uint64_t kStreamBootstrap = 21;

Rng stream(const NuisanceConfig& cfg, std::uint64_t id) { return Rng(cfg.seed).child(id); }

DesignMatrix covariate_design(const MatrixXd& x, const std::vector<std::string>& names) {
  return DesignMatrix::with_intercept(x, names);
}

// [intercept, exposure, x1..xp]
DesignMatrix outcome_design(const MatrixXd& x, const std::vector<std::string>& names,
                            const VectorXd& exposure) {
  MatrixXd m(x.rows(), x.cols() + 1);
  m.col(0) = exposure;
  m.rightCols(x.cols()) = x;
  std::vector<std::string> nm;
  nm.reserve(names.size() + 1);
  nm.push_back("a");
  nm.insert(nm.end(), names.begin(), names.end());
  return DesignMatrix::with_intercept(m, nm);
}

DesignMatrix take_rows(const DesignMatrix& d, const std::vector<Eigen::Index>& rows) {
  DesignMatrix out;
  out.has_intercept = d.has_intercept;
  out.column_names = d.column_names;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), d.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    out.values.row(static_cast<Eigen::Index>(i)) = d.values.row(rows[i]);
  return out;
}

VectorXd take(const VectorXd& v, const std::vector<Eigen::Index>& rows) {
  VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
  return out;
}

VectorXd as_double(const VectorXi& v) { return v.cast<double>(); }

int count_clipped(const VectorXd& p, double lo, double hi) {
  int c = 0;
  for (Eigen::Index i = 0; i < p.size(); ++i)
    if (p[i] <= lo || p[i] >= hi) ++c;
  return c;
}

void check_positivity(int clipped, Eigen::Index total, double threshold, const std::string& what) {
  if (total > 0 && static_cast<double>(clipped) / static_cast<double>(total) > threshold)
    throw PositivityViolation("clipping engaged on more than " +
                              std::to_string(static_cast<int>(threshold * 100)) + "% of rows for " +
                              what);
}

std::vector<Eigen::Index> validation_rows(const TwoPhaseDataset& data) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index i = 0; i < data.n(); ++i)
    if (data.s[i] == 1) idx.push_back(i);
  return idx;
}

Eigen::Index min_validation_size(const NuisanceConfig& cfg) {
  return std::max<Eigen::Index>(2 * cfg.folds, 20);
}

struct OutcomePair {
  VectorXd m1;
  VectorXd m0;
  NuisanceFit fit;
};

// Fit the outcome regression on the given rows and predict both exposure arms
// for every row of the full data.
OutcomePair fit_outcome_pair(const MatrixXd& x, const std::vector<std::string>& names,
                             const VectorXd& y, const VectorXd& exposure,
                             const std::vector<Eigen::Index>& fit_rows, const NuisanceConfig& cfg,
                             std::uint64_t stream_id,
                             const std::optional<VectorXd>& weights = std::nullopt) {
  DesignMatrix full = outcome_design(x, names, exposure);
  DesignMatrix train = take_rows(full, fit_rows);
  VectorXd ytr = take(y, fit_rows);
  std::optional<VectorXd> wtr;
  if (weights) wtr = take(*weights, fit_rows);
  Rng rng = stream(cfg, stream_id);
  OutcomePair out;
  out.fit = fit_super_learner(train, ytr, cfg.outcome_family, cfg.outcome_library, cfg.folds, rng,
                              wtr, cfg.clip_lo, cfg.clip_hi);
  DesignMatrix at1 = outcome_design(x, names, VectorXd::Ones(x.rows()));
  DesignMatrix at0 = outcome_design(x, names, VectorXd::Zero(x.rows()));
  out.m1 = predict(out.fit, at1);
  out.m0 = predict(out.fit, at0);
  if (cfg.cross_fit) {
    // Replace in-sample predictions by out-of-fold ones; rows outside the
    // training set keep the full-data fit's prediction.
    Rng fold_rng = rng.child(900);
    auto labels = fold_assignment(train.rows(), cfg.folds, fold_rng);
    for (int k = 0; k < cfg.folds; ++k) {
      std::vector<Eigen::Index> keep, held;
      for (std::size_t i = 0; i < fit_rows.size(); ++i)
        (labels[i] == k ? held : keep).push_back(static_cast<Eigen::Index>(i));
      if (held.empty()) continue;
      std::optional<VectorXd> wk;
      if (wtr) wk = take(*wtr, keep);
      NuisanceFit fk =
          fit_super_learner(take_rows(train, keep), take(ytr, keep), cfg.outcome_family,
                            cfg.outcome_library, cfg.folds, rng.child(901 + static_cast<std::uint64_t>(k)),
                            wk, cfg.clip_lo, cfg.clip_hi);
      std::vector<Eigen::Index> held_global;
      held_global.reserve(held.size());
      for (Eigen::Index i : held) held_global.push_back(fit_rows[static_cast<std::size_t>(i)]);
      VectorXd p1 = predict(fk, take_rows(at1, held_global));
      VectorXd p0 = predict(fk, take_rows(at0, held_global));
      for (std::size_t i = 0; i < held_global.size(); ++i) {
        out.m1[held_global[i]] = p1[static_cast<Eigen::Index>(i)];
        out.m0[held_global[i]] = p0[static_cast<Eigen::Index>(i)];
      }
    }
  }
  return out;
}

// Binomial SL fit of a binary response on the covariates over the given rows,
// predicted for every row.
// Degrees of freedom consumed by a stacked nuisance model: every learner with
// positive weight was fit to the same data, so their parameters add, plus the
// free stacking weights.
double effective_params(const NuisanceFit& fit) {
  double k = 0.0;
  int active = 0;
  for (Eigen::Index l = 0; l < fit.learner_weights.size(); ++l)
    if (fit.learner_weights[l] > 0.0) {
      ++active;
      k += static_cast<double>(fit.learner_fits[static_cast<std::size_t>(l)].beta.size());
    }
  return k + std::max(active - 1, 0);
}

VectorXd fit_probability(const MatrixXd& x, const std::vector<std::string>& names,
                         const VectorXd& response, const std::vector<Eigen::Index>& fit_rows,
                         const std::vector<LearnerSpec>& library, const NuisanceConfig& cfg,
                         std::uint64_t stream_id, double clip_hi,
                         const std::optional<VectorXd>& weights = std::nullopt,
                         double* k_out = nullptr) {
  DesignMatrix full = covariate_design(x, names);
  DesignMatrix train = take_rows(full, fit_rows);
  VectorXd rtr = take(response, fit_rows);
  std::optional<VectorXd> wtr;
  if (weights) wtr = take(*weights, fit_rows);
  Rng rng = Rng(cfg.seed).child(stream_id);
  NuisanceFit fit = fit_super_learner(train, rtr, Family::BinomialLogit, library, cfg.folds, rng,
                                      wtr, cfg.clip_lo, clip_hi);
  if (k_out) *k_out = effective_params(fit);
  VectorXd pred = predict(fit, full);
  if (cfg.cross_fit) {
    Rng fold_rng = rng.child(900);
    auto labels = fold_assignment(train.rows(), cfg.folds, fold_rng);
    for (int k = 0; k < cfg.folds; ++k) {
      std::vector<Eigen::Index> keep, held;
      for (std::size_t i = 0; i < fit_rows.size(); ++i)
        (labels[i] == k ? held : keep).push_back(static_cast<Eigen::Index>(i));
      if (held.empty()) continue;
      std::optional<VectorXd> wk;
      if (wtr) wk = take(*wtr, keep);
      NuisanceFit fk = fit_super_learner(take_rows(train, keep), take(rtr, keep),
                                         Family::BinomialLogit, library, cfg.folds,
                                         rng.child(901 + static_cast<std::uint64_t>(k)), wk,
                                         cfg.clip_lo, clip_hi);
      std::vector<Eigen::Index> held_global;
      held_global.reserve(held.size());
      for (Eigen::Index i : held) held_global.push_back(fit_rows[static_cast<std::size_t>(i)]);
      VectorXd pk = predict(fk, take_rows(full, held_global));
      for (std::size_t i = 0; i < held_global.size(); ++i)
        pred[held_global[i]] = pk[static_cast<Eigen::Index>(i)];
    }
  }
  return pred;
}

std::vector<Eigen::Index> all_rows(Eigen::Index n) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  return idx;
}

// HC1-style finite-sample correction for in-sample nuisance fitting: a
// nuisance model fit on n_j rows with k_j (weight-averaged) parameters
// deflates its in-sample residuals by roughly (n_j - k_j)/n_j, and with them
// every residual-based influence value. Scale the influence values and the se
// to compensate. Out-of-fold predictions under cross-fitting are already
// honest, so no correction is applied there.
void apply_df_inflation(EstimateReport& rep, const NuisanceConfig& cfg,
                        std::initializer_list<std::pair<double, double>> fits) {
  if (cfg.cross_fit) return;
  double c = 1.0;
  for (const auto& [rows, params] : fits)
    if (rows > 0.0) c *= rows / std::max(rows - params, rows * 0.5);
  const double root = std::sqrt(c);
  rep.influence *= root;
  rep.se *= root;
  rep.diagnostics["df_inflation"] = c;
}

EstimateReport aipw_report(const std::string& tag, const VectorXd& y, const VectorXi& exposure,
                           const MatrixXd& x, const std::vector<std::string>& names,
                           const NuisanceConfig& cfg) {
  auto rows = all_rows(y.size());
  OutcomePair oc =
      fit_outcome_pair(x, names, y, as_double(exposure), rows, cfg, kStreamMainOutcome);
  double k_prop = 0.0;
  VectorXd g = fit_probability(x, names, as_double(exposure), rows, cfg.propensity_library, cfg,
                               kStreamMainPropensity, cfg.clip_hi, std::nullopt, &k_prop);
  int clipped = count_clipped(g, cfg.clip_lo, cfg.clip_hi);
  check_positivity(clipped, y.size(), cfg.positivity_threshold, tag + " propensity");
  EstimateReport rep = report_from_summands(tag, aipw_summands(y, exposure, g, oc.m1, oc.m0));
  rep.diagnostics["clip_propensity"] = clipped;
  const auto nf = static_cast<double>(y.size());
  apply_df_inflation(rep, cfg, {{nf, effective_params(oc.fit)}, {nf, k_prop}});
  return rep;
}

double sample_variance(const VectorXd& centered) {
  if (centered.size() < 2) return 0.0;
  return centered.squaredNorm() / static_cast<double>(centered.size() - 1);
}

double sample_covariance(const VectorXd& a, const VectorXd& b) {
  if (a.size() < 2) return 0.0;
  return a.dot(b) / static_cast<double>(a.size() - 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Summands.

VectorXd aipw_summands(const VectorXd& y, const VectorXi& exposure, const VectorXd& g_hat,
                       const VectorXd& m1, const VectorXd& m0) {
  VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double t = exposure[i];
    const double mt = exposure[i] == 1 ? m1[i] : m0[i];
    out[i] = (t / g_hat[i] - (1.0 - t) / (1.0 - g_hat[i])) * (y[i] - mt) + m1[i] - m0[i];
  }
  return out;
}

VectorXd generalization_summands(const VectorXd& y, const VectorXi& exposure, const VectorXi& s,
                                 const VectorXd& kappa_hat, const VectorXd& pi_hat,
                                 const VectorXd& mu1, const VectorXd& mu0) {
  VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double aug = 0.0;
    if (s[i] == 1) {
      const double t = exposure[i];
      const double mt = exposure[i] == 1 ? mu1[i] : mu0[i];
      aug = (t / (kappa_hat[i] * pi_hat[i]) - (1.0 - t) / (kappa_hat[i] * (1.0 - pi_hat[i]))) *
            (y[i] - mt);
    }
    out[i] = aug + mu1[i] - mu0[i];
  }
  return out;
}

VectorXd ipsw_summands(const VectorXd& y, const VectorXi& exposure, const VectorXi& s,
                       const VectorXd& kappa_hat, const VectorXd& g_hat, const VectorXd& m1,
                       const VectorXd& m0) {
  VectorXd out = VectorXd::Zero(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (s[i] != 1) continue;  // the s factor zeroes the whole summand
    const double t = exposure[i];
    const double mt = exposure[i] == 1 ? m1[i] : m0[i];
    out[i] = (m1[i] - m0[i] + (t / g_hat[i] - (1.0 - t) / (1.0 - g_hat[i])) * (y[i] - mt)) /
             kappa_hat[i];
  }
  return out;
}

VectorXd ipsw_control_variate_summands(const VectorXd& y, const VectorXi& a_star, const VectorXi& s,
                                       const VectorXd& kappa_hat, const VectorXd& g_hat,
                                       const VectorXd& m1, const VectorXd& m0) {
  VectorXd base = aipw_summands(y, a_star, g_hat, m1, m0);
  VectorXd out(y.size());
  for (Eigen::Index i = 0; i < y.size(); ++i)
    out[i] = (static_cast<double>(s[i]) / kappa_hat[i] - 1.0) * base[i];
  return out;
}

EstimateReport report_from_summands(const std::string& tag, const VectorXd& summands) {
  EstimateReport rep;
  rep.estimator_tag = tag;
  rep.estimate = summands.mean();
  rep.influence = summands.array() - rep.estimate;
  rep.se = std::sqrt(sample_variance(rep.influence) / static_cast<double>(summands.size()));
  return rep;
}

// ---------------------------------------------------------------------------
// Component estimators.

EstimateReport estimate_aipw_main_ep(const TwoPhaseDataset& data, const NuisanceConfig& config) {
  return aipw_report("main_ep", data.y, data.a_star, data.x, data.x_names, config);
}

EstimateReport estimate_naive(const TwoPhaseDataset& data, const NuisanceConfig& config) {
  return aipw_report("naive", data.y, data.a_star, data.x, data.x_names, config);
}

EstimateReport estimate_oracle(const GeneratedSample& sample, const NuisanceConfig& config) {
  return aipw_report("oracle", sample.data.y, sample.a_full, sample.data.x, sample.data.x_names,
                     config);
}

EstimateReport estimate_validation_only(const TwoPhaseDataset& data, const NuisanceConfig& config) {
  auto idx = validation_rows(data);
  if (static_cast<Eigen::Index>(idx.size()) < min_validation_size(config))
    throw InsufficientValidation("validation subsample too small to fit nuisance models");
  const auto nv = static_cast<Eigen::Index>(idx.size());
  VectorXd y(nv);
  VectorXi a(nv);
  MatrixXd x(nv, data.x.cols());
  for (Eigen::Index k = 0; k < nv; ++k) {
    y[k] = data.y[idx[static_cast<std::size_t>(k)]];
    a[k] = data.a[idx[static_cast<std::size_t>(k)]];
    x.row(k) = data.x.row(idx[static_cast<std::size_t>(k)]);
  }
  auto rows = all_rows(nv);
  // Same role-class substreams as the generalization estimator's
  // validation-side fits.
  OutcomePair oc =
      fit_outcome_pair(x, data.x_names, y, as_double(a), rows, config, kStreamValOutcome);
  double k_prop = 0.0;
  VectorXd g = fit_probability(x, data.x_names, as_double(a), rows, config.propensity_library,
                               config, kStreamValPropensity, config.clip_hi, std::nullopt, &k_prop);
  int clipped = count_clipped(g, config.clip_lo, config.clip_hi);
  check_positivity(clipped, nv, config.positivity_threshold, "val_only propensity");
  EstimateReport rep = report_from_summands("val_only", aipw_summands(y, a, g, oc.m1, oc.m0));
  rep.diagnostics["clip_propensity"] = clipped;
  const auto nfd = static_cast<double>(nv);
  apply_df_inflation(rep, config, {{nfd, effective_params(oc.fit)}, {nfd, k_prop}});
  return rep;
}

EstimateReport estimate_generalization(const TwoPhaseDataset& data, ExposureSource source,
                                       const NuisanceConfig& config) {
  const Eigen::Index n = data.n();
  auto idx_val = validation_rows(data);
  if (static_cast<Eigen::Index>(idx_val.size()) < min_validation_size(config))
    throw InsufficientValidation("validation subsample too small to fit nuisance models");

  // Exposure vector: entries outside the validation sample are never read by
  // the summand (the s factor zeroes them) but must be populated.
  VectorXi t(n);
  for (Eigen::Index i = 0; i < n; ++i)
    t[i] = source == ExposureSource::Validated ? (data.s[i] == 1 ? data.a[i] : 0) : data.a_star[i];

  const bool reuse_main = source == ExposureSource::ErrorProne && config.reuse_main_ep_outcome;
  const std::vector<Eigen::Index> outcome_rows = reuse_main ? all_rows(n) : idx_val;
  const std::uint64_t outcome_stream = reuse_main ? kStreamMainOutcome : kStreamValOutcome;
  OutcomePair oc =
      fit_outcome_pair(data.x, data.x_names, data.y, as_double(t), outcome_rows, config,
                       outcome_stream);
  double k_prop = 0.0;
  VectorXd pi = fit_probability(data.x, data.x_names, as_double(t), idx_val,
                                config.propensity_library, config, kStreamValPropensity,
                                config.clip_hi, std::nullopt, &k_prop);

  VectorXd kappa;
  int kappa_clipped = 0;
  double k_kappa = 0.0;
  bool kappa_fit = false;
  if (static_cast<Eigen::Index>(idx_val.size()) == n) {
    kappa = VectorXd::Ones(n);  // everyone validated: exact algebraic reduction to AIPW
  } else {
    kappa_fit = true;
    kappa = fit_probability(data.x, data.x_names, as_double(data.s), all_rows(n),
                            config.kappa_library, config, kStreamKappa, 1.0, std::nullopt,
                            &k_kappa);
    kappa_clipped = count_clipped(kappa, config.clip_lo, 2.0);  // lower clips only
    check_positivity(kappa_clipped, n, config.positivity_threshold, "sampling score");
  }

  int pi_clipped = 0;
  for (Eigen::Index i : idx_val)
    if (pi[i] <= config.clip_lo || pi[i] >= config.clip_hi) ++pi_clipped;
  check_positivity(pi_clipped, static_cast<Eigen::Index>(idx_val.size()),
                   config.positivity_threshold, "validation propensity");

  const std::string tag = source == ExposureSource::Validated ? "val" : "val_ep";
  EstimateReport rep =
      report_from_summands(tag, generalization_summands(data.y, t, data.s, kappa, pi, oc.m1, oc.m0));
  rep.diagnostics["clip_propensity"] = pi_clipped;
  rep.diagnostics["clip_kappa"] = kappa_clipped;
  const auto nv = static_cast<double>(idx_val.size());
  const auto n_oc = static_cast<double>(outcome_rows.size());
  if (kappa_fit)
    apply_df_inflation(rep, config,
                       {{n_oc, effective_params(oc.fit)},
                        {nv, k_prop},
                        {static_cast<double>(n), k_kappa}});
  else
    apply_df_inflation(rep, config, {{n_oc, effective_params(oc.fit)}, {nv, k_prop}});
  return rep;
}

namespace {

VectorXd kappa_for_ipsw(const TwoPhaseDataset& data, KappaModel model, const NuisanceConfig& cfg,
                        int* clipped) {
  const Eigen::Index n = data.n();
  VectorXd kappa(n);
  if (model == KappaModel::Known) {
    if (!data.kappa) throw MissingKappa("dataset carries no sampling probabilities");
    kappa = *data.kappa;
  } else {
    // Parametric logistic fit of s on (x, a_star, y); Z-dependent sampling
    // scores are assumed estimable at parametric rate.
    MatrixXd z(n, data.x.cols() + 2);
    z.leftCols(data.x.cols()) = data.x;
    z.col(data.x.cols()) = as_double(data.a_star);
    z.col(data.x.cols() + 1) = data.y;
    std::vector<std::string> names = data.x_names;
    names.push_back("a_star");
    names.push_back("y");
    GlmFit fit = fit_glm(DesignMatrix::with_intercept(z, names), as_double(data.s),
                         Family::BinomialLogit);
    kappa = glm_predict(fit, DesignMatrix::with_intercept(z, names));
  }
  *clipped = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (kappa[i] < cfg.clip_lo) {
      kappa[i] = cfg.clip_lo;
      ++*clipped;
    } else if (kappa[i] > 1.0) {
      kappa[i] = 1.0;
    }
  }
  check_positivity(*clipped, n, cfg.positivity_threshold, "ipsw sampling score");
  return kappa;
}

}  // namespace

EstimateReport estimate_ipsw_val(const TwoPhaseDataset& data, KappaModel kappa_model,
                                 const NuisanceConfig& config) {
  const Eigen::Index n = data.n();
  int kappa_clipped = 0;
  VectorXd kappa = kappa_for_ipsw(data, kappa_model, config, &kappa_clipped);

  VectorXd w(n);
  VectorXi a_fill(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    w[i] = data.s[i] == 1 ? 1.0 / kappa[i] : 0.0;
    a_fill[i] = data.s[i] == 1 ? data.a[i] : 0;
  }
  auto rows = all_rows(n);
  OutcomePair oc = fit_outcome_pair(data.x, data.x_names, data.y, as_double(a_fill), rows, config,
                                    kStreamIpswOutcome, w);
  double k_prop = 0.0;
  VectorXd g = fit_probability(data.x, data.x_names, as_double(a_fill), rows,
                               config.propensity_library, config, kStreamIpswPropensity,
                               config.clip_hi, w, &k_prop);
  int g_clipped = count_clipped(g, config.clip_lo, config.clip_hi);
  check_positivity(g_clipped, n, config.positivity_threshold, "ipsw propensity");

  EstimateReport rep = report_from_summands(
      "ipsw_val", ipsw_summands(data.y, a_fill, data.s, kappa, g, oc.m1, oc.m0));
  rep.diagnostics["clip_propensity"] = g_clipped;
  rep.diagnostics["clip_kappa"] = kappa_clipped;
  // Rows with weight 0 do not constrain the weighted fits; the effective
  // fitting sample is the validation subsample.
  const auto nv = static_cast<double>(data.n_val());
  apply_df_inflation(rep, config, {{nv, effective_params(oc.fit)}, {nv, k_prop}});
  return rep;
}

EstimateReport estimate_ipsw_control_variate(const TwoPhaseDataset& data, KappaModel kappa_model,
                                             const NuisanceConfig& config) {
  const Eigen::Index n = data.n();
  int kappa_clipped = 0;
  VectorXd kappa = kappa_for_ipsw(data, kappa_model, config, &kappa_clipped);

  auto rows = all_rows(n);
  OutcomePair oc = fit_outcome_pair(data.x, data.x_names, data.y, as_double(data.a_star), rows,
                                    config, kStreamMainOutcome);
  double k_prop = 0.0;
  VectorXd g = fit_probability(data.x, data.x_names, as_double(data.a_star), rows,
                               config.propensity_library, config, kStreamMainPropensity,
                               config.clip_hi, std::nullopt, &k_prop);
  int g_clipped = count_clipped(g, config.clip_lo, config.clip_hi);
  check_positivity(g_clipped, n, config.positivity_threshold, "error-prone propensity");

  EstimateReport rep = report_from_summands(
      "ipsw_cv_term",
      ipsw_control_variate_summands(data.y, data.a_star, data.s, kappa, g, oc.m1, oc.m0));
  rep.diagnostics["clip_propensity"] = g_clipped;
  rep.diagnostics["clip_kappa"] = kappa_clipped;
  const auto nfd = static_cast<double>(n);
  apply_df_inflation(rep, config, {{nfd, effective_params(oc.fit)}, {nfd, k_prop}});
  return rep;
}

// ---------------------------------------------------------------------------
// Combination.

CvMoments influence_moments(const EstimateReport& report_val, const EstimateReport& report_val_ep,
                            const EstimateReport& report_main_ep) {
  if (report_val.influence.size() != report_val_ep.influence.size() ||
      report_val.influence.size() != report_main_ep.influence.size())
    throw SchemaMismatch("component reports were not computed on aligned datasets");
  VectorXd diff = report_val_ep.influence - report_main_ep.influence;
  CvMoments m;
  m.v = sample_variance(report_val.influence);
  m.v_big = sample_variance(diff);
  m.gamma = sample_covariance(report_val.influence, diff);
  return m;
}

ControlVariateReport combine_control_variates(const EstimateReport& report_val,
                                              const EstimateReport& report_val_ep,
                                              const EstimateReport& report_main_ep,
                                              const CvMoments& moments, VarianceMethod method,
                                              double level) {
  const auto n = static_cast<double>(report_val.influence.size());
  ControlVariateReport r;
  r.tau_val = report_val.estimate;
  r.tau_val_ep = report_val_ep.estimate;
  r.tau_main_ep = report_main_ep.estimate;
  r.v_hat = moments.v;
  r.gamma_hat = moments.gamma;
  r.v_big_hat = moments.v_big;
  r.variance_method = method;
  r.level = level;
  r.bootstrap_dropped = moments.bootstrap_dropped;

  if (moments.v_big < 1e-12 * moments.v) {
    // The error-prone contrast carries no exploitable signal.
    r.degenerate_cv = true;
    r.b_hat = 0.0;
    r.tau_cv = r.tau_val;
    r.se = std::sqrt(moments.v / n);
  } else {
    r.b_hat = moments.gamma / moments.v_big;
    r.tau_cv = r.tau_val - r.b_hat * (r.tau_val_ep - r.tau_main_ep);
    r.se = std::sqrt((moments.v - moments.gamma * moments.gamma / moments.v_big) / n);
  }
  const double z = normal_quantile(0.5 + level / 2.0);
  r.ci_low = r.tau_cv - z * r.se;
  r.ci_high = r.tau_cv + z * r.se;
  return r;
}

ControlVariateReport combine_ipsw_control_variates(const EstimateReport& report_ipsw_val,
                                                   const EstimateReport& report_control_variate,
                                                   double level) {
  CvMoments m;
  m.v = sample_variance(report_ipsw_val.influence);
  m.v_big = sample_variance(report_control_variate.influence);
  m.gamma = sample_covariance(report_ipsw_val.influence, report_control_variate.influence);
  const auto n = static_cast<double>(report_ipsw_val.influence.size());

  ControlVariateReport r;
  r.tau_val = report_ipsw_val.estimate;
  r.tau_val_ep = report_control_variate.estimate;  // the mean-zero control variate itself
  r.tau_main_ep = 0.0;
  r.v_hat = m.v;
  r.gamma_hat = m.gamma;
  r.v_big_hat = m.v_big;
  r.level = level;
  if (m.v_big < 1e-12 * m.v) {
    r.degenerate_cv = true;
    r.b_hat = 0.0;
    r.tau_cv = r.tau_val;
    r.se = std::sqrt(m.v / n);
  } else {
    r.b_hat = m.gamma / m.v_big;
    r.tau_cv = r.tau_val - r.b_hat * report_control_variate.estimate;
    r.se = std::sqrt((m.v - m.gamma * m.gamma / m.v_big) / n);
  }
  const double z = normal_quantile(0.5 + level / 2.0);
  r.ci_low = r.tau_cv - z * r.se;
  r.ci_high = r.tau_cv + z * r.se;
  return r;
}

CvMoments bootstrap_gamma_v(const TwoPhaseDataset& data, const NuisanceConfig& config, int B,
                            Rng rng) {
  if (B < 2) throw BootstrapFailure("bootstrap requires B >= 2");
  const Eigen::Index n = data.n();

  EstimateReport orig_val = estimate_generalization(data, ExposureSource::Validated, config);
  EstimateReport orig_val_ep = estimate_generalization(data, ExposureSource::ErrorProne, config);
  EstimateReport orig_main_ep = estimate_aipw_main_ep(data, config);
  const double center_val = orig_val.estimate;
  const double center_diff = orig_val_ep.estimate - orig_main_ep.estimate;

  std::vector<double> tv, td;
  tv.reserve(static_cast<std::size_t>(B));
  td.reserve(static_cast<std::size_t>(B));
  int dropped = 0;
  Rng boot_root = rng.child(kStreamBootstrap);
  for (int b = 0; b < B; ++b) {
    Rng rb = boot_root.child(static_cast<std::uint64_t>(b));
    TwoPhaseDataset res;
    res.y.resize(n);
    res.a_star.resize(n);
    res.s.resize(n);
    res.a.resize(n);
    res.x.resize(n, data.x.cols());
    res.x_names = data.x_names;
    if (data.kappa) res.kappa = VectorXd(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      auto j = static_cast<Eigen::Index>(rb.below(static_cast<std::uint64_t>(n)));
      res.y[i] = data.y[j];
      res.a_star[i] = data.a_star[j];
      res.s[i] = data.s[j];
      res.a[i] = data.a[j];
      res.x.row(i) = data.x.row(j);
      if (data.kappa) (*res.kappa)[i] = (*data.kappa)[j];
    }
    try {
      EstimateReport bval = estimate_generalization(res, ExposureSource::Validated, config);
      EstimateReport bval_ep = estimate_generalization(res, ExposureSource::ErrorProne, config);
      EstimateReport bmain_ep = estimate_aipw_main_ep(res, config);
      tv.push_back(bval.estimate);
      td.push_back(bval_ep.estimate - bmain_ep.estimate);
    } catch (const Error&) {
      ++dropped;
    }
  }
  if (dropped > B / 20)
    throw BootstrapFailure("more than 5% of bootstrap resamples failed (" +
                           std::to_string(dropped) + " of " + std::to_string(B) + ")");

  const auto kept = static_cast<double>(tv.size());
  double sv = 0.0, sg = 0.0, sd = 0.0;
  for (std::size_t b = 0; b < tv.size(); ++b) {
    const double dv = tv[b] - center_val;
    const double dd = td[b] - center_diff;
    sv += dv * dv;
    sg += dv * dd;
    sd += dd * dd;
  }
  // Sample moments of the bootstrap estimates, scaled by n onto the
  // per-observation influence scale.
  CvMoments m;
  const double scale = static_cast<double>(n) / (kept - 1.0);
  m.v = scale * sv;
  m.gamma = scale * sg;
  m.v_big = scale * sd;
  m.bootstrap_dropped = dropped;
  return m;
}

// ---------------------------------------------------------------------------
// Multiple imputation with predictive mean matching.

EstimateReport estimate_mi_pmm(const TwoPhaseDataset& data, const MiOptions& options,
                               const NuisanceConfig& config) {
  const Eigen::Index n = data.n();
  auto idx_val = validation_rows(data);
  const auto nv = static_cast<Eigen::Index>(idx_val.size());
  if (nv < options.donors + 1)
    throw DonorPoolExhausted("validation sample smaller than the donor pool");

  // Imputation model: logit of A on (x, a_star, y) over validation rows.
  MatrixXd z(n, data.x.cols() + 2);
  z.leftCols(data.x.cols()) = data.x;
  z.col(data.x.cols()) = as_double(data.a_star);
  z.col(data.x.cols() + 1) = data.y;
  std::vector<std::string> names = data.x_names;
  names.push_back("a_star");
  names.push_back("y");
  DesignMatrix full = DesignMatrix::with_intercept(z, names);
  DesignMatrix dval = take_rows(full, idx_val);
  VectorXd aval(nv);
  for (Eigen::Index k = 0; k < nv; ++k) aval[k] = data.a[idx_val[static_cast<std::size_t>(k)]];

  GlmFit base = fit_glm(dval, aval, Family::BinomialLogit);
  VectorXd donor_pred = glm_predict(base, dval);

  // Donors sorted by predicted mean for nearest-neighbour lookup.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(nv));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index i, Eigen::Index j) { return donor_pred[i] < donor_pred[j]; });

  std::vector<Eigen::Index> idx_mis;
  for (Eigen::Index i = 0; i < n; ++i)
    if (data.s[i] == 0) idx_mis.push_back(i);

  Rng mi_root = stream(config, kStreamMi);
  const int m = options.imputations;
  std::vector<double> points, within;
  VectorXd influence_sum = VectorXd::Zero(n);

  for (int imp = 0; imp < m; ++imp) {
    Rng rb = mi_root.child(static_cast<std::uint64_t>(imp));
    VectorXi completed(n);
    for (Eigen::Index i = 0; i < n; ++i) completed[i] = data.s[i] == 1 ? data.a[i] : 0;

    if (!idx_mis.empty()) {
      // Bayesian-bootstrap perturbation of the imputation model.
      VectorXd w(nv);
      for (Eigen::Index k = 0; k < nv; ++k) w[k] = -std::log(rb.uniform_open());
      GlmFit pert = fit_glm(dval, aval, Family::BinomialLogit, w);
      DesignMatrix dmis = take_rows(full, idx_mis);
      VectorXd recipient_pred = glm_predict(pert, dmis);

      for (std::size_t r = 0; r < idx_mis.size(); ++r) {
        const double target = recipient_pred[static_cast<Eigen::Index>(r)];
        // Window of `donors` nearest predicted means around the insertion point.
        auto it = std::lower_bound(order.begin(), order.end(), target,
                                   [&](Eigen::Index i, double v) { return donor_pred[i] < v; });
        auto pos = static_cast<Eigen::Index>(it - order.begin());
        Eigen::Index lo = pos, hi = pos;  // [lo, hi) window over `order`
        while (hi - lo < options.donors) {
          const bool can_left = lo > 0;
          const bool can_right = hi < nv;
          if (can_left &&
              (!can_right || target - donor_pred[order[static_cast<std::size_t>(lo - 1)]] <=
                                 donor_pred[order[static_cast<std::size_t>(hi)]] - target)) {
            --lo;
          } else {
            ++hi;
          }
        }
        auto pick = lo + static_cast<Eigen::Index>(rb.below(static_cast<std::uint64_t>(hi - lo)));
        Eigen::Index donor_row = idx_val[static_cast<std::size_t>(order[static_cast<std::size_t>(pick)])];
        completed[idx_mis[r]] = data.a[donor_row];
      }
    }

    EstimateReport rep =
        aipw_report("mi_pmm_imputation", data.y, completed, data.x, data.x_names, config);
    points.push_back(rep.estimate);
    within.push_back(rep.se * rep.se);
    influence_sum += rep.influence;
  }

  // Rubin's rules with Barnard-Rubin degrees of freedom.
  const double md = static_cast<double>(m);
  double qbar = std::accumulate(points.begin(), points.end(), 0.0) / md;
  double wbar = std::accumulate(within.begin(), within.end(), 0.0) / md;
  double bvar = 0.0;
  for (double q : points) bvar += (q - qbar) * (q - qbar);
  bvar = m > 1 ? bvar / (md - 1.0) : 0.0;
  const double total = wbar + (1.0 + 1.0 / md) * bvar;

  double df = 1e9;
  if (bvar > 0.0 && total > 0.0) {
    const double lambda = (1.0 + 1.0 / md) * bvar / total;
    const double nu_old = (md - 1.0) / (lambda * lambda);
    const double nu_com = static_cast<double>(n) - 1.0;
    const double nu_obs = (nu_com + 1.0) / (nu_com + 3.0) * nu_com * (1.0 - lambda);
    df = 1.0 / (1.0 / nu_old + 1.0 / nu_obs);
  }

  EstimateReport rep;
  rep.estimator_tag = "mi_pmm";
  rep.estimate = qbar;
  rep.influence = influence_sum / md;
  rep.influence.array() -= rep.influence.mean();
  rep.se = std::sqrt(total);
  rep.se_from_influence = false;
  rep.diagnostics["mi_df"] = df;
  rep.diagnostics["mi_between_var"] = bvar;
  rep.diagnostics["mi_within_var"] = wbar;
  return rep;
}

std::pair<double, double> confidence_interval(const EstimateReport& report, double level) {
  double q;
  auto it = report.diagnostics.find("mi_df");
  if (it != report.diagnostics.end() && it->second < 1e8) {
    boost::math::students_t dist(it->second);
    q = boost::math::quantile(dist, 0.5 + level / 2.0);
  } else {
    q = normal_quantile(0.5 + level / 2.0);
  }
  return {report.estimate - q * report.se, report.estimate + q * report.se};
}

double normal_quantile(double p) {
  boost::math::normal dist;
  return boost::math::quantile(dist, p);
}

}  // namespace cvme
