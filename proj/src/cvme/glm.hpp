#ifndef CVME_GLM_HPP
#define CVME_GLM_HPP

#include <optional>

#include "cvme/design.hpp"

namespace cvme {

enum class Family { GaussianIdentity, BinomialLogit };

struct GlmDiagnostics {
  int iterations = 0;
  double final_score_norm = 0.0;  // max abs weighted score at the solution
  bool ridge_jitter_applied = false;
  bool degenerate_response = false;
};

struct GlmFit {
  VectorXd beta;
  Family family = Family::GaussianIdentity;
  GlmDiagnostics diagnostics;
};

double expit(double z);
double logit(double p);

// Maximum (weighted) likelihood fit. Gaussian-identity solves the weighted
// normal equations in closed form; binomial-logit runs IRLS with step-halving
// until the max absolute score falls below `score_tol`. Rank-deficient normal
// equations are retried with a 1e-10 ridge on the diagonal and flagged.
GlmFit fit_glm(const DesignMatrix& design, const VectorXd& response, Family family,
               const std::optional<VectorXd>& observation_weights = std::nullopt,
               int max_iterations = 100, double score_tol = 1e-8);

VectorXd glm_predict(const GlmFit& fit, const DesignMatrix& design);

}  // namespace cvme

#endif
