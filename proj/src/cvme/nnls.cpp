#include "cvme/nnls.hpp"

#include <limits>
#include <vector>

#include "cvme/errors.hpp"

namespace cvme {

namespace {

// Least squares restricted to the passive set, zeros elsewhere.
VectorXd restricted_ls(const MatrixXd& a, const VectorXd& b, const std::vector<bool>& passive) {
  std::vector<Eigen::Index> idx;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    if (passive[j]) idx.push_back(j);
  VectorXd x = VectorXd::Zero(a.cols());
  if (idx.empty()) return x;
  MatrixXd ap(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t k = 0; k < idx.size(); ++k) ap.col(static_cast<Eigen::Index>(k)) = a.col(idx[k]);
  VectorXd z = ap.colPivHouseholderQr().solve(b);
  for (std::size_t k = 0; k < idx.size(); ++k) x[idx[k]] = z[static_cast<Eigen::Index>(k)];
  return x;
}

}  // namespace

VectorXd nnls(const MatrixXd& a, const VectorXd& b, double kkt_tol, int max_iterations) {
  if (!a.allFinite() || !b.allFinite()) throw SingularDesign("nnls inputs must be finite");
  if (b.size() != a.rows()) throw SchemaMismatch("nnls dimension mismatch");
  const Eigen::Index p = a.cols();
  if (max_iterations <= 0) max_iterations = 30 * static_cast<int>(p) + 30;

  std::vector<bool> passive(static_cast<std::size_t>(p), false);
  VectorXd x = VectorXd::Zero(p);

  for (int iter = 0; iter < max_iterations; ++iter) {
    VectorXd grad = a.transpose() * (b - a * x);  // negative of the objective gradient

    // Most-positive gradient among active coordinates; lowest index wins ties.
    Eigen::Index best = -1;
    double best_val = kkt_tol;
    for (Eigen::Index j = 0; j < p; ++j) {
      if (!passive[j] && grad[j] > best_val) {
        best_val = grad[j];
        best = j;
      }
    }
    if (best < 0) return x;  // KKT satisfied
    passive[static_cast<std::size_t>(best)] = true;

    VectorXd z = restricted_ls(a, b, passive);
    while (true) {
      bool feasible = true;
      for (Eigen::Index j = 0; j < p; ++j) {
        if (passive[j] && z[j] <= 0.0) {
          feasible = false;
          break;
        }
      }
      if (feasible) break;
      // Move toward z until the first passive coordinate hits zero.
      double alpha = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < p; ++j) {
        if (passive[j] && z[j] <= 0.0) {
          double step = x[j] / (x[j] - z[j]);
          alpha = std::min(alpha, step);
        }
      }
      x += alpha * (z - x);
      for (Eigen::Index j = 0; j < p; ++j) {
        if (passive[j] && x[j] <= kkt_tol * 1e-4) {
          x[j] = 0.0;
          passive[j] = false;
        }
      }
      z = restricted_ls(a, b, passive);
    }
    x = z;
  }
  throw MaxIterations("nnls active-set iteration limit exceeded");
}

}  // namespace cvme
