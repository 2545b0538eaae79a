#include "cvme/glm.hpp"

#include <cmath>
#include <limits>

#include "cvme/errors.hpp"

namespace cvme {

double expit(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double logit(double p) { return std::log(p / (1.0 - p)); }

namespace {

constexpr double kRidgeJitter = 1e-10;

// Solve (X' W X + jitter?) beta = X' W z, retrying with a ridge when the
// normal equations are not positive definite.
VectorXd solve_normal_equations(const MatrixXd& xtwx, const VectorXd& xtwz, bool* jittered) {
  Eigen::LLT<MatrixXd> llt(xtwx);
  if (llt.info() == Eigen::Success) {
    VectorXd beta = llt.solve(xtwz);
    if (beta.allFinite()) return beta;
  }
  *jittered = true;
  MatrixXd reg = xtwx;
  reg.diagonal().array() += kRidgeJitter;
  Eigen::LDLT<MatrixXd> ldlt(reg);
  VectorXd beta = ldlt.solve(xtwz);
  if (!beta.allFinite()) throw SingularDesign("normal equations singular even after ridge jitter");
  return beta;
}

void check_preconditions(const DesignMatrix& design, const VectorXd& response, Family family,
                         const std::optional<VectorXd>& w) {
  design.check_finite();
  if (response.size() != design.rows())
    throw SchemaMismatch("response length does not match design rows");
  if (!response.allFinite()) throw SingularDesign("response contains non-finite values");
  if (family == Family::BinomialLogit) {
    for (Eigen::Index i = 0; i < response.size(); ++i) {
      if (response[i] != 0.0 && response[i] != 1.0)
        throw SchemaMismatch("binomial response must lie in {0,1}");
    }
  }
  if (w) {
    if (w->size() != design.rows()) throw SchemaMismatch("weight length does not match design rows");
    if (!w->allFinite() || (w->array() < 0.0).any())
      throw SingularDesign("observation weights must be finite and non-negative");
    if (w->maxCoeff() <= 0.0) throw SingularDesign("all observation weights are zero");
  }
}

double weighted_deviance(const VectorXd& y, const VectorXd& p, const VectorXd& w) {
  double dev = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    double pi = std::min(std::max(p[i], 1e-300), 1.0 - 1e-16);
    dev -= 2.0 * w[i] * (y[i] * std::log(pi) + (1.0 - y[i]) * std::log1p(-pi));
  }
  return dev;
}

}  // namespace

GlmFit fit_glm(const DesignMatrix& design, const VectorXd& response, Family family,
               const std::optional<VectorXd>& observation_weights, int max_iterations,
               double score_tol) {
  check_preconditions(design, response, family, observation_weights);
  const VectorXd w =
      observation_weights ? *observation_weights : VectorXd::Ones(design.rows());
  const MatrixXd& x = design.values;

  GlmFit fit;
  fit.family = family;

  if (family == Family::GaussianIdentity) {
    MatrixXd xtwx = x.transpose() * w.asDiagonal() * x;
    VectorXd xtwz = x.transpose() * (w.cwiseProduct(response));
    fit.beta = solve_normal_equations(xtwx, xtwz, &fit.diagnostics.ridge_jitter_applied);
    VectorXd resid = response - x * fit.beta;
    fit.diagnostics.final_score_norm =
        (x.transpose() * w.cwiseProduct(resid)).cwiseAbs().maxCoeff();
    return fit;
  }

  // Binomial-logit. A constant response has no interior MLE; return the
  // intercept-only fit at the clipped logit, flagged.
  const double wmean = w.dot(response) / w.sum();
  if (wmean <= 0.0 || wmean >= 1.0) {
    fit.beta = VectorXd::Zero(x.cols());
    double p = std::min(std::max(wmean, 0.01), 0.99);
    fit.beta[0] = design.has_intercept ? logit(p) : 0.0;
    fit.diagnostics.degenerate_response = true;
    return fit;
  }

  VectorXd beta = VectorXd::Zero(x.cols());
  if (design.has_intercept) beta[0] = logit(wmean);
  VectorXd eta = x * beta;
  VectorXd p = eta.unaryExpr([](double z) { return expit(z); });
  double dev = weighted_deviance(response, p, w);

  double prev_dev = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= max_iterations; ++iter) {
    VectorXd score = x.transpose() * (w.cwiseProduct(response - p));
    fit.diagnostics.iterations = iter - 1;
    fit.diagnostics.final_score_norm = score.cwiseAbs().maxCoeff();
    if (fit.diagnostics.final_score_norm < score_tol) {
      fit.beta = beta;
      return fit;
    }
    // Deviance stall: under (quasi-)separation the likelihood has no interior
    // optimum and the score never reaches score_tol; accept the fit once the
    // deviance stops moving, as the saturated predictions are clipped
    // downstream anyway.
    if (prev_dev - dev < 1e-12 * (std::abs(dev) + 1.0)) {
      fit.beta = beta;
      return fit;
    }
    prev_dev = dev;
    VectorXd irls_w = w.cwiseProduct(p.cwiseProduct(VectorXd::Ones(p.size()) - p));
    irls_w = irls_w.cwiseMax(1e-12);
    MatrixXd xtwx = x.transpose() * irls_w.asDiagonal() * x;
    VectorXd step = solve_normal_equations(xtwx, score, &fit.diagnostics.ridge_jitter_applied);

    // With very large n the score sum bottoms out at floating-point noise above
    // score_tol; a negligible Newton step means we are at that floor.
    if (step.cwiseAbs().maxCoeff() <
        1e-10 * (1.0 + beta.cwiseAbs().maxCoeff())) {
      fit.beta = beta;
      return fit;
    }

    // Step-halving on deviance increase.
    double scale = 1.0;
    for (int half = 0; half < 30; ++half) {
      VectorXd cand = beta + scale * step;
      VectorXd eta_c = x * cand;
      VectorXd p_c = eta_c.unaryExpr([](double z) { return expit(z); });
      double dev_c = weighted_deviance(response, p_c, w);
      if (dev_c <= dev + 1e-12) {
        beta = cand;
        p = p_c;
        dev = dev_c;
        break;
      }
      scale *= 0.5;
      if (half == 29) {
        // No descent direction left; likely separation.
        throw NonConvergence("IRLS step-halving failed to decrease the deviance");
      }
    }
  }
  throw NonConvergence("IRLS exceeded the maximum number of iterations");
}

VectorXd glm_predict(const GlmFit& fit, const DesignMatrix& design) {
  if (design.cols() != fit.beta.size())
    throw SchemaMismatch("prediction design width does not match fitted coefficients");
  VectorXd eta = design.values * fit.beta;
  if (fit.family == Family::GaussianIdentity) return eta;
  return eta.unaryExpr([](double z) { return expit(z); });
}

}  // namespace cvme
