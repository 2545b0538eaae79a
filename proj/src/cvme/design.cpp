#include "cvme/design.hpp"

#include "cvme/errors.hpp"

namespace cvme {

DesignMatrix DesignMatrix::with_intercept(const MatrixXd& x, const std::vector<std::string>& names) {
  if (static_cast<Eigen::Index>(names.size()) != x.cols())
    throw SchemaMismatch("column name count does not match matrix width");
  DesignMatrix d;
  d.values.resize(x.rows(), x.cols() + 1);
  d.values.col(0).setOnes();
  d.values.rightCols(x.cols()) = x;
  d.column_names.reserve(names.size() + 1);
  d.column_names.push_back("(intercept)");
  d.column_names.insert(d.column_names.end(), names.begin(), names.end());
  d.has_intercept = true;
  return d;
}

DesignMatrix DesignMatrix::pairwise_expanded() const {
  const Eigen::Index first = has_intercept ? 1 : 0;
  const Eigen::Index p = cols() - first;
  DesignMatrix out;
  out.has_intercept = has_intercept;
  out.values.resize(rows(), cols() + p * (p - 1) / 2);
  out.values.leftCols(cols()) = values;
  out.column_names = column_names;
  Eigen::Index k = cols();
  for (Eigen::Index i = first; i < cols(); ++i) {
    for (Eigen::Index j = i + 1; j < cols(); ++j) {
      out.values.col(k) = values.col(i).cwiseProduct(values.col(j));
      out.column_names.push_back(column_names[i] + ":" + column_names[j]);
      ++k;
    }
  }
  return out;
}

void DesignMatrix::check_finite() const {
  if (!values.allFinite()) throw SingularDesign("design matrix contains non-finite entries");
}

}  // namespace cvme
