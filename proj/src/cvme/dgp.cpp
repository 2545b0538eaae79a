#include "cvme/dgp.hpp"

#include <cmath>

#include "cvme/errors.hpp"
#include "cvme/glm.hpp"

namespace cvme {

const char* sampling_mode_name(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::CompletelyRandom:
      return "completely-random";
    case SamplingMode::CovariateDependent:
      return "covariate-dependent";
    case SamplingMode::ComplexZDependent:
      return "complex-z-dependent";
  }
  return "?";
}

SamplingMode sampling_mode_from_name(const std::string& name) {
  if (name == "completely-random") return SamplingMode::CompletelyRandom;
  if (name == "covariate-dependent") return SamplingMode::CovariateDependent;
  if (name == "complex-z-dependent") return SamplingMode::ComplexZDependent;
  throw ConfigError("unknown sampling mode: " + name);
}

void SimScenario::validate() const {
  if (n < 1) throw InvalidScenario("n must be positive");
  if (!(sensitivity > 0.0 && sensitivity <= 1.0))
    throw InvalidScenario("sensitivity must lie in (0, 1]");
  if (!(false_positive_rate >= 0.0 && false_positive_rate < 1.0))
    throw InvalidScenario("false positive rate must lie in [0, 1)");
  if (!(rho > 0.0 && rho <= 1.0)) throw InvalidScenario("rho must lie in (0, 1]");
  if (epsilon_sd < 0.0) throw InvalidScenario("outcome noise SD must be non-negative");
  Eigen::LLT<Eigen::Matrix3d> llt(sigma_x);
  if (llt.info() != Eigen::Success)
    throw InvalidScenario("sigma_x must be symmetric positive definite");
}

SimScenario default_scenario() {
  SimScenario s;
  s.sigma_x << 1.0, 0.25, 0.5,
               0.25, 1.0, -0.4,
               0.5, -0.4, 1.0;
  s.rho = 0.2;
  s.sensitivity = 0.85;
  return s;
}

namespace {

Eigen::Matrix3d cholesky_lower(const SimScenario& sc) {
  Eigen::LLT<Eigen::Matrix3d> llt(sc.sigma_x);
  if (llt.info() != Eigen::Success) throw InvalidScenario("sigma_x is not positive definite");
  return llt.matrixL();
}

Eigen::Vector3d draw_x(Rng& rng, const Eigen::Matrix3d& chol) {
  Eigen::Vector3d z{rng.normal(), rng.normal(), rng.normal()};
  return Eigen::Vector3d::Ones() + chol * z;
}

}  // namespace

GeneratedSample generate(const SimScenario& scenario, std::uint64_t seed) {
  scenario.validate();
  const Eigen::Index n = scenario.n;
  const Eigen::Matrix3d chol = cholesky_lower(scenario);
  Rng root(seed);
  Rng rx = root.child(1);
  Rng ra = root.child(2);
  Rng rastar = root.child(3);
  Rng ry = root.child(4);
  Rng rs = root.child(5);

  GeneratedSample g;
  g.data.x.resize(n, 3);
  g.data.x_names = {"x1", "x2", "x3"};
  g.data.y.resize(n);
  g.data.a_star.resize(n);
  g.data.s.resize(n);
  g.data.a.resize(n);
  g.a_full.resize(n);
  g.y0.resize(n);
  g.y1.resize(n);
  g.kappa_true.resize(n);

  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Vector3d x = draw_x(rx, chol);
    g.data.x.row(i) = x.transpose();
    double pa = expit(scenario.alpha0 + x.dot(scenario.alpha));
    int a = ra.bernoulli(pa) ? 1 : 0;
    g.a_full[i] = a;
    double p_star = a == 1 ? scenario.sensitivity : scenario.false_positive_rate;
    g.data.a_star[i] = rastar.bernoulli(p_star) ? 1 : 0;
    // Shared noise draw across the two potential outcomes (rank-preserving).
    double eps = scenario.epsilon_sd * ry.normal();
    g.y0[i] = scenario.beta0 + x.dot(scenario.beta) + eps;
    g.y1[i] = scenario.beta0 + scenario.tau + x.dot(scenario.beta) + x.dot(scenario.gamma) + eps;
    g.data.y[i] = a == 1 ? g.y1[i] : g.y0[i];
  }

  // Selection probabilities, normalized by the empirical mean of the expit
  // term so that E[S] tracks rho.
  VectorXd lin(n);
  switch (scenario.sampling_mode) {
    case SamplingMode::CompletelyRandom:
      g.kappa_true.setConstant(scenario.rho);
      break;
    case SamplingMode::CovariateDependent:
      for (Eigen::Index i = 0; i < n; ++i)
        lin[i] = expit(scenario.eta0 + g.data.x.row(i).transpose().head<3>().dot(scenario.eta));
      break;
    case SamplingMode::ComplexZDependent:
      // Z = (x1, x2, x3, y, a_star) with coefficients (eta, zeta_y, zeta_astar).
      for (Eigen::Index i = 0; i < n; ++i)
        lin[i] = expit(scenario.eta0 + g.data.x.row(i).transpose().head<3>().dot(scenario.eta) +
                       scenario.zeta_y * g.data.y[i] + scenario.zeta_astar * g.data.a_star[i]);
      break;
  }
  if (scenario.sampling_mode != SamplingMode::CompletelyRandom) {
    double norm = lin.mean();
    for (Eigen::Index i = 0; i < n; ++i) {
      double k = scenario.rho * lin[i] / norm;
      if (k > 1.0) {
        k = 1.0;
        ++g.kappa_clip_count;
      }
      g.kappa_true[i] = k;
    }
  }

  for (Eigen::Index i = 0; i < n; ++i) {
    int s = rs.bernoulli(g.kappa_true[i]) ? 1 : 0;
    g.data.s[i] = s;
    g.data.a[i] = s == 1 ? g.a_full[i] : -1;
  }
  if (scenario.sampling_mode == SamplingMode::ComplexZDependent) g.data.kappa = g.kappa_true;
  return g;
}

TrueTate true_tate(const SimScenario& scenario, std::uint64_t oracle_draws, std::uint64_t seed) {
  scenario.validate();
  const Eigen::Matrix3d chol = cholesky_lower(scenario);
  Rng rng = Rng(seed).child(0x7a7e);
  double sum = 0.0, sumsq = 0.0;
  for (std::uint64_t i = 0; i < oracle_draws; ++i) {
    Eigen::Vector3d x = draw_x(rng, chol);
    double d = scenario.tau + x.dot(scenario.gamma);
    sum += d;
    sumsq += d * d;
  }
  const double nd = static_cast<double>(oracle_draws);
  TrueTate t;
  t.value = sum / nd;
  double var = (sumsq - sum * sum / nd) / (nd - 1.0);
  t.mc_se = std::sqrt(var / nd);
  return t;
}

SimScenario vccc_like_scenario() {
  SimScenario s = default_scenario();
  s.sensitivity = 1.0 - 0.031;
  s.false_positive_rate = 0.420;

  // Retune the exposure intercept so marginal P(A=1) matches the target
  // prevalence, using a fixed covariate sample and bisection.
  const double target = 0.123;
  const Eigen::Matrix3d chol = cholesky_lower(s);
  const int m = 400000;
  Rng rng = Rng(0x5ccc);
  std::vector<double> xa(m);
  for (int i = 0; i < m; ++i) xa[static_cast<std::size_t>(i)] = draw_x(rng, chol).dot(s.alpha);
  auto prevalence = [&](double a0) {
    double acc = 0.0;
    for (double v : xa) acc += expit(a0 + v);
    return acc / m - target;
  };
  double lo = -20.0, hi = 20.0;
  if (prevalence(lo) > 0.0 || prevalence(hi) < 0.0)
    throw RootFindFailure("prevalence target not bracketed");
  for (int iter = 0; iter < 200; ++iter) {
    double mid = 0.5 * (lo + hi);
    (prevalence(mid) < 0.0 ? lo : hi) = mid;
  }
  s.alpha0 = 0.5 * (lo + hi);
  return s;
}

}  // namespace cvme
