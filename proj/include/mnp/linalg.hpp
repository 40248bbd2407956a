#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "mnp/errors.hpp"

namespace mnp {

// Symmetric positive-definite matrix with its lower Cholesky factor.
// `factor * factor^T == values + jitter_applied * I` up to roundoff.
struct PdMatrix {
  Eigen::MatrixXd values;
  Eigen::MatrixXd factor;  // lower triangular
  double jitter_applied = 0.0;

  int dim() const { return static_cast<int>(values.rows()); }

  // Solve (values + jitter I) x = b through the factor.
  template <typename Derived>
  typename Derived::PlainObject solve(const Eigen::MatrixBase<Derived>& b) const {
    typename Derived::PlainObject x = factor.triangularView<Eigen::Lower>().solve(b.derived());
    factor.triangularView<Eigen::Lower>().transpose().solveInPlace(x);
    return x;
  }

  double log_det() const {
    return 2.0 * factor.diagonal().array().log().sum();
  }

  Eigen::MatrixXd inverse() const {
    return solve(Eigen::MatrixXd::Identity(dim(), dim()));
  }
};

inline bool is_symmetric(const Eigen::MatrixXd& w, double rel_tol = 1e-10) {
  const double scale = std::max(1.0, w.cwiseAbs().maxCoeff());
  return (w - w.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

// Cholesky with an escalating jitter ladder 0, 1e-12, 1e-10, ... up to
// max_jitter. Throws SingularMatrixError (naming `label`) when even the
// largest jitter fails, ArgumentError on non-symmetric or non-finite input.
inline PdMatrix chol_psd(const Eigen::MatrixXd& w, double max_jitter = 1e-6,
                         const std::string& label = "matrix") {
  if (w.rows() != w.cols() || w.rows() == 0)
    throw ArgumentError("chol_psd: " + label + " is not square");
  if (!w.allFinite())
    throw ArgumentError("chol_psd: " + label + " has non-finite entries");
  if (!is_symmetric(w))
    throw ArgumentError("chol_psd: " + label + " is not symmetric");

  const Eigen::MatrixXd sym = 0.5 * (w + w.transpose());
  double jitter = 0.0;
  while (true) {
    Eigen::MatrixXd trial = sym;
    if (jitter > 0.0) trial.diagonal().array() += jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(trial);
    if (llt.info() == Eigen::Success) {
      PdMatrix out;
      out.values = sym;
      out.factor = llt.matrixL();
      out.jitter_applied = jitter;
      return out;
    }
    if (jitter >= max_jitter) {
      throw SingularMatrixError("chol_psd: " + label +
                                " not positive definite within jitter " +
                                std::to_string(max_jitter));
    }
    jitter = (jitter == 0.0) ? 1e-12 : std::min(jitter * 100.0, max_jitter);
  }
}

}  // namespace mnp
