#include <cmath>

#include "cvme/dgp.hpp"
#include "cvme/errors.hpp"
#include "cvme/glm.hpp"
#include "cvme/nnls.hpp"
#include "cvme/super_learner.hpp"
#include "doctest.h"

using namespace cvme;

namespace {

// Projected gradient descent run to a tight tolerance; independent check for
// the active-set solver.
VectorXd nnls_projected_gradient(const MatrixXd& a, const VectorXd& b, int iterations) {
  VectorXd x = VectorXd::Zero(a.cols());
  double lipschitz = (a.transpose() * a).operatorNorm();
  double step = 1.0 / lipschitz;
  for (int it = 0; it < iterations; ++it) {
    VectorXd g = a.transpose() * (a * x - b);
    x = (x - step * g).cwiseMax(0.0);
  }
  return x;
}

}  // namespace

TEST_CASE("intercept-only logistic fit recovers logit of the mean") {
  const int n = 400;
  MatrixXd empty(n, 0);
  DesignMatrix d = DesignMatrix::with_intercept(empty, {});
  VectorXd y(n);
  for (int i = 0; i < n; ++i) y[i] = i < n / 4 ? 1.0 : 0.0;
  GlmFit fit = fit_glm(d, y, Family::BinomialLogit);
  CHECK(fit.beta.size() == 1);
  CHECK(fit.beta[0] == doctest::Approx(std::log(0.25 / 0.75)).epsilon(1e-8));
}

TEST_CASE("gaussian fit interpolates an exact linear response") {
  const int n = 50;
  MatrixXd x(n, 1);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = 0.1 * i - 2.0;
    y[i] = 2.0 + 3.0 * x(i, 0);
  }
  GlmFit fit = fit_glm(DesignMatrix::with_intercept(x, {"x"}), y, Family::GaussianIdentity);
  CHECK(fit.beta[0] == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(fit.beta[1] == doctest::Approx(3.0).epsilon(1e-10));
}

TEST_CASE("gaussian fit equals the closed-form weighted least squares solution") {
  Rng rng(11);
  const int n = 200;
  MatrixXd x(n, 2);
  VectorXd y(n), w(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    y[i] = 1.0 + x(i, 0) - 0.5 * x(i, 1) + rng.normal();
    w[i] = 0.5 + rng.uniform();
  }
  DesignMatrix d = DesignMatrix::with_intercept(x, {"x1", "x2"});
  GlmFit fit = fit_glm(d, y, Family::GaussianIdentity, w);
  MatrixXd xw = w.asDiagonal() * d.values;
  VectorXd direct = (d.values.transpose() * xw).ldlt().solve(d.values.transpose() * (w.asDiagonal() * y));
  CHECK((fit.beta - direct).lpNorm<Eigen::Infinity>() < 1e-10);
}

TEST_CASE("logistic MLE is consistent for the generating exposure model") {
  SimScenario sc = default_scenario();
  sc.n = 1000000;
  GeneratedSample g = generate(sc, 42);
  DesignMatrix d = DesignMatrix::with_intercept(g.data.x, g.data.x_names);
  VectorXd a = g.a_full.cast<double>();
  GlmFit fit = fit_glm(d, a, Family::BinomialLogit);
  Eigen::Vector4d truth(0.1, -0.5, 0.3, 0.85);
  for (int j = 0; j < 4; ++j) CHECK(std::abs(fit.beta[j] - truth[j]) < 0.02);
}

TEST_CASE("weighted score equations hold at every converged GLM optimum") {
  Rng rng(5);
  const int n = 300;
  MatrixXd x(n, 2);
  VectorXd y(n), w(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.uniform();
    double p = expit(-0.3 + x(i, 0) - 0.8 * x(i, 1));
    y[i] = rng.bernoulli(p) ? 1.0 : 0.0;
    w[i] = 0.25 + rng.uniform();
  }
  DesignMatrix d = DesignMatrix::with_intercept(x, {"x1", "x2"});
  GlmFit fit = fit_glm(d, y, Family::BinomialLogit, w);
  VectorXd mu = glm_predict(fit, d);
  VectorXd score = d.values.transpose() * (w.cwiseProduct(y - mu));
  CHECK(score.lpNorm<Eigen::Infinity>() < 1e-6);
}

TEST_CASE("degenerate binomial response yields flagged intercept-only fit") {
  MatrixXd x(20, 1);
  x.setRandom();
  VectorXd y = VectorXd::Zero(20);
  GlmFit fit = fit_glm(DesignMatrix::with_intercept(x, {"x"}), y, Family::BinomialLogit);
  CHECK(fit.diagnostics.degenerate_response);
  VectorXd p = glm_predict(fit, DesignMatrix::with_intercept(x, {"x"}));
  CHECK(p[0] > 0.0);
  CHECK(p[0] < 0.05);
}

TEST_CASE("nnls trivial cases") {
  MatrixXd eye = MatrixXd::Identity(2, 2);
  VectorXd b(2);
  b << 1.0, -1.0;
  VectorXd x = nnls(eye, b);
  CHECK(x[0] == doctest::Approx(1.0));
  CHECK(x[1] == 0.0);

  VectorXd b2(2);
  b2 << 0.3, 0.7;
  VectorXd x2 = nnls(eye, b2);
  CHECK((x2 - b2).norm() < 1e-12);

  MatrixXd ones(2, 1);
  ones << 1.0, 1.0;
  VectorXd b3(2);
  b3 << 1.0, 3.0;
  VectorXd x3 = nnls(ones, b3);
  CHECK(x3[0] == doctest::Approx(2.0));
}

TEST_CASE("nnls matches a projected-gradient oracle and satisfies KKT") {
  Rng rng(77);
  MatrixXd a(50, 3);
  VectorXd b(50);
  for (int i = 0; i < 50; ++i) {
    for (int j = 0; j < 3; ++j) a(i, j) = rng.normal();
    b[i] = rng.normal();
  }
  VectorXd x = nnls(a, b);
  VectorXd ref = nnls_projected_gradient(a, b, 200000);
  double obj = (a * x - b).squaredNorm();
  double obj_ref = (a * ref - b).squaredNorm();
  CHECK(obj <= obj_ref + 1e-8);

  VectorXd g = a.transpose() * (a * x - b);
  for (int j = 0; j < 3; ++j) {
    CHECK(x[j] >= 0.0);
    CHECK(g[j] >= -1e-8);
    CHECK(x[j] * g[j] <= 1e-8);
  }
}

TEST_CASE("super learner with the mean library alone reproduces the sample mean") {
  Rng rng(9);
  MatrixXd x(60, 2);
  VectorXd y(60);
  for (int i = 0; i < 60; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    y[i] = rng.uniform();
  }
  DesignMatrix d = DesignMatrix::with_intercept(x, {"x1", "x2"});
  NuisanceFit fit = fit_super_learner(d, y, Family::GaussianIdentity,
                                      {LearnerSpec{LearnerKind::Mean}}, 5, Rng(3));
  CHECK(fit.learner_weights.size() == 1);
  CHECK(fit.learner_weights[0] == doctest::Approx(1.0));
  VectorXd p = predict(fit, d);
  CHECK(p[0] == doctest::Approx(y.mean()).epsilon(1e-12));
  CHECK((p.array() - p[0]).abs().maxCoeff() == 0.0);
}

TEST_CASE("stacking favors the generating model and weights stay on the simplex") {
  Rng rng(123);
  const int n = 4000;
  MatrixXd x(n, 2);
  VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    y[i] = 0.5 + 2.0 * x(i, 0) - x(i, 1) + 0.3 * rng.normal();
  }
  DesignMatrix d = DesignMatrix::with_intercept(x, {"x1", "x2"});
  NuisanceFit fit = fit_super_learner(
      d, y, Family::GaussianIdentity,
      {LearnerSpec{LearnerKind::Mean}, LearnerSpec{LearnerKind::GlmMainEffects}}, 10, Rng(4));
  CHECK(fit.learner_weights.minCoeff() >= 0.0);
  CHECK(fit.learner_weights.sum() == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(fit.learner_weights[1] >= 0.95);
}

TEST_CASE("predict is a convex combination of the per-learner predictions") {
  // Mean learner forced against a main-effects learner on a two-point design.
  Rng rng(31);
  MatrixXd x(100, 1);
  VectorXd y(100);
  for (int i = 0; i < 100; ++i) {
    x(i, 0) = rng.normal();
    y[i] = x(i, 0) + 0.1 * rng.normal();
  }
  DesignMatrix d = DesignMatrix::with_intercept(x, {"x"});
  NuisanceFit fit = fit_super_learner(
      d, y, Family::GaussianIdentity,
      {LearnerSpec{LearnerKind::Mean}, LearnerSpec{LearnerKind::GlmMainEffects}}, 5, Rng(8));
  VectorXd combined = predict(fit, d);
  VectorXd p0 = VectorXd::Constant(100, fit.learner_weights[0] > 0.0
                                            ? fit.learner_fits[0].beta[0]
                                            : 0.0);
  VectorXd p1 = glm_predict(fit.learner_fits[1], d);
  VectorXd manual = fit.learner_weights[0] * p0 + fit.learner_weights[1] * p1;
  CHECK((combined - manual).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("stacked propensity estimate matches the generating expit at a point") {
  SimScenario sc = default_scenario();
  sc.n = 200000;
  GeneratedSample g = generate(sc, 17);
  DesignMatrix d = DesignMatrix::with_intercept(g.data.x, g.data.x_names);
  VectorXd a = g.a_full.cast<double>();
  NuisanceFit fit =
      fit_super_learner(d, a, Family::BinomialLogit, default_library(), 10, Rng(2));
  MatrixXd point(1, 3);
  point << 1.0, 1.0, 1.0;
  DesignMatrix dp = DesignMatrix::with_intercept(point, g.data.x_names);
  double pred = predict(fit, dp)[0];
  CHECK(std::abs(pred - expit(0.75)) < 0.02);
}

TEST_CASE("fitting is deterministic given identical inputs and stream") {
  Rng rng(66);
  MatrixXd x(500, 2);
  VectorXd y(500);
  for (int i = 0; i < 500; ++i) {
    x(i, 0) = rng.normal();
    x(i, 1) = rng.normal();
    y[i] = rng.bernoulli(expit(x(i, 0))) ? 1.0 : 0.0;
  }
  DesignMatrix d = DesignMatrix::with_intercept(x, {"x1", "x2"});
  NuisanceFit f1 = fit_super_learner(d, y, Family::BinomialLogit, default_library(), 10, Rng(5));
  NuisanceFit f2 = fit_super_learner(d, y, Family::BinomialLogit, default_library(), 10, Rng(5));
  VectorXd p1 = predict(f1, d);
  VectorXd p2 = predict(f2, d);
  CHECK((p1 - p2).lpNorm<Eigen::Infinity>() == 0.0);
}

TEST_CASE("fold assignment covers every index with balanced contiguous blocks") {
  Rng rng(1);
  auto labels = fold_assignment(23, 5, rng);
  std::vector<int> counts(5, 0);
  for (int l : labels) {
    REQUIRE(l >= 0);
    REQUIRE(l < 5);
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int c : counts) CHECK(c >= 4);
}
