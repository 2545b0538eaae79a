#ifndef CVME_NNLS_HPP
#define CVME_NNLS_HPP

#include "cvme/design.hpp"

namespace cvme {

// Minimize ||A x - b||_2 subject to x >= 0 via Lawson-Hanson active-set
// iteration. Ties in the candidate-selection step break toward the lowest
// column index. The returned solution satisfies the KKT conditions with
// residual below `kkt_tol`.
VectorXd nnls(const MatrixXd& a, const VectorXd& b, double kkt_tol = 1e-8,
              int max_iterations = 0 /* 0 -> 30 * cols */);

}  // namespace cvme

#endif
