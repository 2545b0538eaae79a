#include "cvme/super_learner.hpp"

#include <algorithm>
#include <limits>
#include <numeric>

#include "cvme/errors.hpp"
#include "cvme/nnls.hpp"

namespace cvme {

std::string LearnerSpec::name() const {
  switch (kind) {
    case LearnerKind::Mean:
      return "mean";
    case LearnerKind::GlmMainEffects:
      return "glm";
    case LearnerKind::GlmPairwiseInteractions:
      return "glm-interaction";
  }
  return "?";
}

std::vector<LearnerSpec> default_library() {
  return {{LearnerKind::Mean}, {LearnerKind::GlmMainEffects}, {LearnerKind::GlmPairwiseInteractions}};
}

namespace {

DesignMatrix learner_design(const LearnerSpec& spec, const DesignMatrix& design) {
  if (spec.kind == LearnerKind::GlmPairwiseInteractions) return design.pairwise_expanded();
  return design;
}

DesignMatrix take_rows(const DesignMatrix& d, const std::vector<Eigen::Index>& rows) {
  DesignMatrix out;
  out.has_intercept = d.has_intercept;
  out.column_names = d.column_names;
  out.values.resize(static_cast<Eigen::Index>(rows.size()), d.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.values.row(static_cast<Eigen::Index>(i)) = d.values.row(rows[i]);
  return out;
}

VectorXd take(const VectorXd& v, const std::vector<Eigen::Index>& rows) {
  VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
  return out;
}

GlmFit fit_learner(const LearnerSpec& spec, const DesignMatrix& design, const VectorXd& response,
                   Family family, const std::optional<VectorXd>& w) {
  if (spec.kind == LearnerKind::Mean) {
    DesignMatrix intercept_only;
    intercept_only.values = MatrixXd::Ones(design.rows(), 1);
    intercept_only.column_names = {"(intercept)"};
    intercept_only.has_intercept = true;
    return fit_glm(intercept_only, response, family, w);
  }
  return fit_glm(learner_design(spec, design), response, family, w);
}

VectorXd predict_learner(const LearnerSpec& spec, const GlmFit& fit, const DesignMatrix& design) {
  if (spec.kind == LearnerKind::Mean) {
    DesignMatrix intercept_only;
    intercept_only.values = MatrixXd::Ones(design.rows(), 1);
    intercept_only.column_names = {"(intercept)"};
    intercept_only.has_intercept = true;
    return glm_predict(fit, intercept_only);
  }
  return glm_predict(fit, learner_design(spec, design));
}

}  // namespace

std::vector<int> fold_assignment(Eigen::Index n, int folds, Rng& rng) {
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  for (Eigen::Index i = n - 1; i > 0; --i) {
    auto j = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
  }
  std::vector<int> fold(static_cast<std::size_t>(n));
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    // Contiguous blocks over the permuted order.
    int f = static_cast<int>((static_cast<long long>(pos) * folds) / n);
    fold[static_cast<std::size_t>(perm[static_cast<std::size_t>(pos)])] = f;
  }
  return fold;
}

VectorXd predict(const NuisanceFit& fit, const DesignMatrix& design) {
  if (design.cols() != fit.trained_cols || design.column_names != fit.trained_names)
    throw SchemaMismatch("prediction design does not match the training schema");
  VectorXd out = VectorXd::Zero(design.rows());
  for (std::size_t k = 0; k < fit.library.size(); ++k) {
    double w = fit.learner_weights[static_cast<Eigen::Index>(k)];
    if (w == 0.0) continue;
    out += w * predict_learner(fit.library[k], fit.learner_fits[k], design);
  }
  if (fit.family == Family::BinomialLogit)
    out = out.cwiseMax(fit.clip_lo).cwiseMin(fit.clip_hi);
  return out;
}

NuisanceFit fit_super_learner(const DesignMatrix& design, const VectorXd& response, Family family,
                              const std::vector<LearnerSpec>& library, int folds, Rng rng,
                              const std::optional<VectorXd>& observation_weights, double clip_lo,
                              double clip_hi) {
  const Eigen::Index n = design.rows();
  if (library.empty()) throw SuperLearnerFailure("empty learner library");
  if (folds < 2 || folds > n) throw SuperLearnerFailure("folds must lie in [2, n]");
  const std::size_t m = library.size();

  NuisanceFit fit;
  fit.family = family;
  fit.library = library;
  fit.clip_lo = clip_lo;
  fit.clip_hi = clip_hi;
  fit.trained_cols = design.cols();
  fit.trained_names = design.column_names;
  fit.weights_used = observation_weights.has_value();

  std::vector<int> fold = fold_assignment(n, folds, rng);
  MatrixXd cv_pred = MatrixXd::Zero(n, static_cast<Eigen::Index>(m));
  std::vector<bool> alive(m, true);

  for (int f = 0; f < folds; ++f) {
    std::vector<Eigen::Index> train_rows, test_rows;
    for (Eigen::Index i = 0; i < n; ++i)
      (fold[static_cast<std::size_t>(i)] == f ? test_rows : train_rows).push_back(i);
    if (test_rows.empty()) continue;
    DesignMatrix dtr = take_rows(design, train_rows);
    DesignMatrix dte = take_rows(design, test_rows);
    VectorXd ytr = take(response, train_rows);
    std::optional<VectorXd> wtr;
    if (observation_weights) wtr = take(*observation_weights, train_rows);
    for (std::size_t k = 0; k < m; ++k) {
      if (!alive[k]) continue;
      try {
        GlmFit lf = fit_learner(library[k], dtr, ytr, family, wtr);
        VectorXd pred = predict_learner(library[k], lf, dte);
        for (std::size_t i = 0; i < test_rows.size(); ++i)
          cv_pred(test_rows[i], static_cast<Eigen::Index>(k)) = pred[static_cast<Eigen::Index>(i)];
      } catch (const Error&) {
        alive[k] = false;
      }
    }
  }
  if (std::none_of(alive.begin(), alive.end(), [](bool a) { return a; }))
    throw SuperLearnerFailure("every learner failed during cross-validation");

  // CV squared error per learner, used both for the NNLS fallback and
  // reported as a diagnostic.
  const VectorXd obs_w = observation_weights ? *observation_weights : VectorXd::Ones(n);
  fit.cv_errors.resize(static_cast<Eigen::Index>(m));
  for (std::size_t k = 0; k < m; ++k) {
    if (!alive[k]) {
      fit.cv_errors[static_cast<Eigen::Index>(k)] = std::numeric_limits<double>::infinity();
      continue;
    }
    VectorXd resid = response - cv_pred.col(static_cast<Eigen::Index>(k));
    fit.cv_errors[static_cast<Eigen::Index>(k)] =
        obs_w.cwiseProduct(resid.cwiseAbs2()).sum() / obs_w.sum();
  }

  // Stacking weights: NNLS on the (weight-scaled) CV prediction matrix over
  // the surviving learners.
  std::vector<Eigen::Index> live_idx;
  for (std::size_t k = 0; k < m; ++k)
    if (alive[k]) live_idx.push_back(static_cast<Eigen::Index>(k));
  MatrixXd z(n, static_cast<Eigen::Index>(live_idx.size()));
  for (std::size_t k = 0; k < live_idx.size(); ++k) z.col(static_cast<Eigen::Index>(k)) = cv_pred.col(live_idx[k]);
  VectorXd b = response;
  if (observation_weights) {
    VectorXd sqw = obs_w.cwiseSqrt();
    z = sqw.asDiagonal() * z;
    b = sqw.cwiseProduct(b);
  }
  VectorXd wts_live = nnls(z, b);

  fit.learner_weights = VectorXd::Zero(static_cast<Eigen::Index>(m));
  double total = wts_live.sum();
  if (total <= 0.0) {
    // All-zero NNLS solution: fall back to the single learner with lowest CV error.
    fit.nnls_fallback = true;
    Eigen::Index best = live_idx[0];
    for (Eigen::Index k : live_idx)
      if (fit.cv_errors[k] < fit.cv_errors[best]) best = k;
    fit.learner_weights[best] = 1.0;
  } else {
    for (std::size_t k = 0; k < live_idx.size(); ++k)
      fit.learner_weights[live_idx[k]] = wts_live[static_cast<Eigen::Index>(k)] / total;
  }

  // Full-data refit of every learner that carries weight.
  fit.learner_fits.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    if (fit.learner_weights[static_cast<Eigen::Index>(k)] == 0.0) continue;
    fit.learner_fits[k] = fit_learner(library[k], design, response, family, observation_weights);
  }
  return fit;
}

}  // namespace cvme
