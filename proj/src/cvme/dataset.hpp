#ifndef CVME_DATASET_HPP
#define CVME_DATASET_HPP

#include <optional>
#include <string>
#include <vector>

#include "cvme/design.hpp"

namespace cvme {

// Two-phase sample: outcome, error-prone exposure for everyone, gold-standard
// exposure only where s = 1.
struct TwoPhaseDataset {
  VectorXd y;
  VectorXi a_star;                 // {0,1}
  VectorXi s;                      // {0,1}
  VectorXi a;                      // {0,1} where s = 1, -1 (missing) elsewhere
  MatrixXd x;                      // n x p covariates, no intercept column
  std::vector<std::string> x_names;
  std::optional<VectorXd> kappa;   // known sampling probabilities, (0,1]

  Eigen::Index n() const { return y.size(); }
  Eigen::Index n_val() const { return s.sum(); }

  // Structural checks: binary indicators, a present exactly where s = 1,
  // finite outcome and covariates. Throws ParseError with a row index.
  void validate() const;
};

// Generated sample: the observable dataset plus the generator's hidden
// columns (true exposure everywhere, both potential outcomes, true sampling
// probabilities).
struct GeneratedSample {
  TwoPhaseDataset data;
  VectorXi a_full;
  VectorXd y0;
  VectorXd y1;
  VectorXd kappa_true;
  int kappa_clip_count = 0;  // normalized kappa values clipped at 1
};

}  // namespace cvme

#endif
