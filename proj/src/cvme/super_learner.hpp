#ifndef CVME_SUPER_LEARNER_HPP
#define CVME_SUPER_LEARNER_HPP

#include <optional>
#include <string>
#include <vector>

#include "cvme/glm.hpp"
#include "cvme/rng.hpp"

namespace cvme {

enum class LearnerKind { Mean, GlmMainEffects, GlmPairwiseInteractions };

struct LearnerSpec {
  LearnerKind kind = LearnerKind::GlmMainEffects;

  std::string name() const;
};

// Default three-learner library: mean, main-effects GLM, pairwise-interaction GLM.
std::vector<LearnerSpec> default_library();

// A fitted (possibly stacked) nuisance prediction function. Immutable after
// construction; safe to share across threads.
struct NuisanceFit {
  Family family = Family::GaussianIdentity;
  std::vector<LearnerSpec> library;
  std::vector<GlmFit> learner_fits;     // aligned with library
  VectorXd learner_weights;             // non-negative, sums to 1
  VectorXd cv_errors;                   // per-learner CV mean squared error
  bool nnls_fallback = false;           // all-zero NNLS, fell back to best single learner
  bool weights_used = false;            // observation weights were supplied
  Eigen::Index trained_cols = 0;        // width of the unexpanded training design
  std::vector<std::string> trained_names;
  double clip_lo = 0.01;
  double clip_hi = 0.99;
};

// Weighted combination of the per-learner predictions; binomial-logit output
// is clipped to [clip_lo, clip_hi].
VectorXd predict(const NuisanceFit& fit, const DesignMatrix& design);

// K-fold cross-validated non-negative stacking over the learner library.
// Fold assignment is a deterministic function of `rng`: random permutation,
// then contiguous blocks. Stacking weights minimize (weighted) CV squared
// error, solved with NNLS and renormalized to sum to 1; each learner is then
// refit on the full data. A learner that fails to fit is dropped (its weight
// forced to 0); if every learner fails, SuperLearnerFailure is thrown.
NuisanceFit fit_super_learner(const DesignMatrix& design, const VectorXd& response, Family family,
                              const std::vector<LearnerSpec>& library, int folds, Rng rng,
                              const std::optional<VectorXd>& observation_weights = std::nullopt,
                              double clip_lo = 0.01, double clip_hi = 0.99);

// Deterministic fold labels in [0, folds): permute indices, then cut into
// contiguous blocks.
std::vector<int> fold_assignment(Eigen::Index n, int folds, Rng& rng);

}  // namespace cvme

#endif
