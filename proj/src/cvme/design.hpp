#ifndef CVME_DESIGN_HPP
#define CVME_DESIGN_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

namespace cvme {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

// Dense design matrix with named columns. An intercept column, when present,
// is the leading constant-1 column.
struct DesignMatrix {
  MatrixXd values;
  std::vector<std::string> column_names;
  bool has_intercept = false;

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }

  // Intercept + the given raw columns.
  static DesignMatrix with_intercept(const MatrixXd& x, const std::vector<std::string>& names);

  // All distinct pairwise products of the non-intercept columns, appended
  // after the main effects (SL.glm.interaction semantics, no higher orders).
  DesignMatrix pairwise_expanded() const;

  void check_finite() const;
};

}  // namespace cvme

#endif
