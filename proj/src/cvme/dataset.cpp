#include "cvme/dataset.hpp"

#include <cmath>

#include "cvme/errors.hpp"

namespace cvme {

void TwoPhaseDataset::validate() const {
  const Eigen::Index nn = y.size();
  if (nn < 1) throw ParseError("dataset has no rows");
  auto expect = [nn](Eigen::Index got, const char* what) {
    if (got != nn) throw ParseError(std::string(what) + ": length does not match outcome length");
  };
  expect(a_star.size(), "a_star");
  expect(s.size(), "s");
  expect(a.size(), "a");
  expect(x.rows(), "x");
  if (x.cols() < 1) throw ParseError("dataset has no covariate columns");
  if (kappa) expect(kappa->size(), "kappa");
  for (Eigen::Index i = 0; i < nn; ++i) {
    const std::string row = "row " + std::to_string(i + 1);
    if (!std::isfinite(y[i])) throw ParseError(row + ": non-finite outcome");
    if (a_star[i] != 0 && a_star[i] != 1) throw ParseError(row + ": a_star must be 0 or 1");
    if (s[i] != 0 && s[i] != 1) throw ParseError(row + ": s must be 0 or 1");
    if (s[i] == 1 && a[i] != 0 && a[i] != 1)
      throw ParseError(row + ": a must be 0 or 1 where s = 1");
    if (s[i] == 0 && a[i] != -1)
      throw ParseError(row + ": a must be empty where s = 0");
    if (kappa && !((*kappa)[i] > 0.0 && (*kappa)[i] <= 1.0))
      throw ParseError(row + ": kappa must lie in (0, 1]");
  }
  if (!x.allFinite()) throw ParseError("covariate matrix contains non-finite entries");
}

}  // namespace cvme
