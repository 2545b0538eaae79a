#ifndef CVME_ESTIMATORS_HPP
#define CVME_ESTIMATORS_HPP

#include <map>
#include <string>

#include "cvme/dataset.hpp"
#include "cvme/super_learner.hpp"

namespace cvme {

// Nuisance estimation settings shared by every estimator.
struct NuisanceConfig {
  std::vector<LearnerSpec> outcome_library = default_library();
  std::vector<LearnerSpec> propensity_library = default_library();
  std::vector<LearnerSpec> kappa_library = default_library();
  Family outcome_family = Family::GaussianIdentity;
  int folds = 10;
  double clip_lo = 0.01;
  double clip_hi = 0.99;
  // Fraction of clipped denominator probabilities that signals an overlap failure.
  double positivity_threshold = 0.25;
  // Reuse the full-data error-prone outcome fit for the validation-side
  // error-prone estimator instead of refitting on validation rows.
  bool reuse_main_ep_outcome = false;
  // K-fold cross-fitting of the nuisance predictions (off by default:
  // in-sample fitting matches the simulation design; the flag exists for
  // rate-robustness experiments).
  bool cross_fit = false;
  std::uint64_t seed = 1;
};

struct EstimateReport {
  std::string estimator_tag;
  double estimate = 0.0;
  VectorXd influence;  // centered: mean zero by construction
  double se = 0.0;
  bool se_from_influence = true;
  std::map<std::string, double> diagnostics;
};

enum class ExposureSource { Validated, ErrorProne };
enum class VarianceMethod { Influence, Bootstrap };
enum class KappaModel { Known, Estimated };

struct ControlVariateReport {
  double tau_cv = 0.0;
  double tau_val = 0.0;
  double tau_val_ep = 0.0;
  double tau_main_ep = 0.0;
  double v_hat = 0.0;
  double gamma_hat = 0.0;
  double v_big_hat = 0.0;
  double b_hat = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double level = 0.95;
  VarianceMethod variance_method = VarianceMethod::Influence;
  bool degenerate_cv = false;
  int bootstrap_dropped = 0;
};

// ---------------------------------------------------------------------------
// Row-wise summands. These are the algebraic kernels shared by the estimators
// and by the test oracles; all probability inputs are assumed pre-clipped.

// Standard AIPW summand with exposure t:
//   (t/g - (1-t)/(1-g)) (y - m_t) + m1 - m0.
VectorXd aipw_summands(const VectorXd& y, const VectorXi& exposure, const VectorXd& g_hat,
                       const VectorXd& m1, const VectorXd& m0);

// Generalization summand; the s factor annihilates the exposure-dependent
// term for non-validated rows, so `exposure` entries there are ignored.
VectorXd generalization_summands(const VectorXd& y, const VectorXi& exposure, const VectorXi& s,
                                 const VectorXd& kappa_hat, const VectorXd& pi_hat,
                                 const VectorXd& mu1, const VectorXd& mu0);

// Weighted summand for biased validation sampling:
//   (s/kappa) * {m1 - m0 + (t/g - (1-t)/(1-g))(y - m_t)}.
VectorXd ipsw_summands(const VectorXd& y, const VectorXi& exposure, const VectorXi& s,
                       const VectorXd& kappa_hat, const VectorXd& g_hat, const VectorXd& m1,
                       const VectorXd& m0);

// Mean-zero control-variate summand for biased validation sampling:
//   (s/kappa - 1) * {error-prone AIPW summand}.
VectorXd ipsw_control_variate_summands(const VectorXd& y, const VectorXi& a_star,
                                       const VectorXi& s, const VectorXd& kappa_hat,
                                       const VectorXd& g_hat, const VectorXd& m1,
                                       const VectorXd& m0);

// Build an EstimateReport from row-wise summands: the estimate is their mean,
// influence values are centered summands, and the standard error is the
// sample SD of the influence values over sqrt(n).
EstimateReport report_from_summands(const std::string& tag, const VectorXd& summands);

// ---------------------------------------------------------------------------
// Component estimators.

// Full-data AIPW with the error-prone exposure in place of the true one.
EstimateReport estimate_aipw_main_ep(const TwoPhaseDataset& data, const NuisanceConfig& config);

// Same computation, reported under the "naive" tag.
EstimateReport estimate_naive(const TwoPhaseDataset& data, const NuisanceConfig& config);

// Full-data AIPW with the true exposure everywhere; requires generated data.
EstimateReport estimate_oracle(const GeneratedSample& sample, const NuisanceConfig& config);

// AIPW restricted to the validation subsample, ignoring the sampling design.
EstimateReport estimate_validation_only(const TwoPhaseDataset& data, const NuisanceConfig& config);

// Doubly-robust generalization estimator: outcome and exposure models fit on
// validation rows, sampling score fit on the full sample, outcome-model
// contrast averaged over all rows.
EstimateReport estimate_generalization(const TwoPhaseDataset& data, ExposureSource source,
                                       const NuisanceConfig& config);

// IPSW estimator with nuisances fit under s/kappa weights.
EstimateReport estimate_ipsw_val(const TwoPhaseDataset& data, KappaModel kappa_model,
                                 const NuisanceConfig& config);

// The IPSW control variate: mean of (s/kappa - 1) times the error-prone AIPW
// summand; asymptotically mean zero by construction.
EstimateReport estimate_ipsw_control_variate(const TwoPhaseDataset& data, KappaModel kappa_model,
                                             const NuisanceConfig& config);

// ---------------------------------------------------------------------------
// Combination and variance estimation.

struct CvMoments {
  double v = 0.0;
  double gamma = 0.0;
  double v_big = 0.0;
  int bootstrap_dropped = 0;
};

// Plug-in moment estimates from the three influence vectors.
CvMoments influence_moments(const EstimateReport& report_val, const EstimateReport& report_val_ep,
                            const EstimateReport& report_main_ep);

// Bootstrap moment estimates: B resamples of the full data, the three
// component estimators recomputed per resample (nuisance refits included),
// moments scaled by n to match the influence convention. Failed resamples are
// dropped up to 5% of B.
CvMoments bootstrap_gamma_v(const TwoPhaseDataset& data, const NuisanceConfig& config, int B,
                            Rng rng);

ControlVariateReport combine_control_variates(const EstimateReport& report_val,
                                              const EstimateReport& report_val_ep,
                                              const EstimateReport& report_main_ep,
                                              const CvMoments& moments, VarianceMethod method,
                                              double level = 0.95);

// IPSW corollary: tau_cv = tau_ipsw_val - (Gamma/V) * phi_main.
ControlVariateReport combine_ipsw_control_variates(const EstimateReport& report_ipsw_val,
                                                   const EstimateReport& report_control_variate,
                                                   double level = 0.95);

// ---------------------------------------------------------------------------
// Multiple imputation with predictive mean matching, Rubin's rules, and
// Barnard-Rubin degrees of freedom. The imputation model is a logistic fit of
// the validated exposure on (x, a_star, y), perturbed per imputation by
// Bayesian-bootstrap reweighting.
struct MiOptions {
  int imputations = 10;
  int donors = 5;
};

EstimateReport estimate_mi_pmm(const TwoPhaseDataset& data, const MiOptions& options,
                               const NuisanceConfig& config);

// Wald interval; for reports carrying a "mi_df" diagnostic a Student-t
// quantile with that many degrees of freedom is used instead.
std::pair<double, double> confidence_interval(const EstimateReport& report, double level = 0.95);

double normal_quantile(double p);

}  // namespace cvme

#endif
