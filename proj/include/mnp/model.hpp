#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mnp/errors.hpp"
#include "mnp/linalg.hpp"
#include "mnp/mvn.hpp"
#include "mnp/rng.hpp"

namespace mnp {

// Observed categorical data: n rows of covariates with class labels in
// 1..L. Labels are 1-based at the API surface and 0-based internally.
struct Dataset {
  int n = 0;
  int p = 0;
  int L = 0;
  std::vector<int> y;  // labels, 1-based
  Eigen::MatrixXd X;   // n x p covariate rows

  void validate() const {
    if (n < 1 || p < 1 || L < 2) throw ValidationError("dataset: need n >= 1, p >= 1, L >= 2");
    if (static_cast<int>(y.size()) != n || X.rows() != n || X.cols() != p)
      throw ValidationError("dataset: inconsistent dimensions");
    if (!X.allFinite()) throw ValidationError("dataset: non-finite covariate entry");
    for (int i = 0; i < n; ++i) {
      if (y[i] < 1 || y[i] > L)
        throw ValidationError("dataset: label " + std::to_string(y[i]) + " at row " +
                              std::to_string(i + 1) + " outside 1.." + std::to_string(L));
    }
  }
};

// Complete problem statement: data, known utility-noise covariance, and the
// prior variance of the identified coefficient vector. Class L is the fixed
// reference with zero coefficients, so the free parameter dimension is
// p * (L - 1).
struct MnpModel {
  Dataset data;
  Eigen::MatrixXd sigma;  // L x L, symmetric positive definite
  double nu2 = 1.0;

  int coef_dim() const { return data.p * (data.L - 1); }

  void validate() const {
    data.validate();
    if (!(nu2 > 0.0)) throw ValidationError("model: prior variance must be positive");
    if (sigma.rows() != data.L || sigma.cols() != data.L)
      throw ValidationError("model: noise covariance must be L x L");
    if (!is_symmetric(sigma, 1e-10)) throw ValidationError("model: noise covariance not symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success)
      throw ValidationError("model: noise covariance not positive definite");
  }
};

// Utility-difference map for reference class ell: rows are (v_k - v_ell)^T
// over k != ell in ascending order. `reduced` drops column L, which absorbs
// the beta_L = 0 identification.
struct ContrastMatrix {
  int ell = 0;  // 1-based
  Eigen::MatrixXd full;     // (L-1) x L
  Eigen::MatrixXd reduced;  // (L-1) x (L-1)
};

inline ContrastMatrix build_contrast(int ell, int L) {
  if (L < 2) throw ArgumentError("build_contrast: need L >= 2");
  if (ell < 1 || ell > L) throw ArgumentError("build_contrast: class index out of range");
  ContrastMatrix out;
  out.ell = ell;
  out.full = Eigen::MatrixXd::Zero(L - 1, L);
  int r = 0;
  for (int k = 1; k <= L; ++k) {
    if (k == ell) continue;
    out.full(r, k - 1) = 1.0;
    out.full(r, ell - 1) -= 1.0;
    ++r;
  }
  out.reduced = out.full.leftCols(L - 1);
  return out;
}

// Per-observation design block -reduced_contrast(y) (x) x^T, an
// (L-1) x p(L-1) matrix acting on the stacked coefficient vector.
inline Eigen::MatrixXd build_observation_design(const Eigen::VectorXd& x, int y, int L) {
  if (!x.allFinite()) throw ArgumentError("build_observation_design: non-finite covariates");
  const ContrastMatrix c = build_contrast(y, L);
  const int p = static_cast<int>(x.size());
  Eigen::MatrixXd out(L - 1, p * (L - 1));
  for (int r = 0; r < L - 1; ++r)
    for (int j = 0; j < L - 1; ++j)
      out.block(r, j * p, 1, p) = -c.reduced(r, j) * x.transpose();
  return out;
}

// Stacked design and block-diagonal utility-difference covariance. Lambda is
// held as its diagonal blocks; the dense form exists for diagnostics only.
struct DesignExpansion {
  Eigen::MatrixXd xbar;            // n(L-1) x p(L-1)
  std::vector<PdMatrix> lambda;    // n blocks of size (L-1) x (L-1)
  int block_size = 0;              // L - 1
  int n = 0;

  int total_dim() const { return n * block_size; }

  auto xbar_block(int i) const { return xbar.middleRows(i * block_size, block_size); }

  Eigen::MatrixXd lambda_dense() const {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(total_dim(), total_dim());
    for (int i = 0; i < n; ++i)
      out.block(i * block_size, i * block_size, block_size, block_size) = lambda[i].values;
    return out;
  }
};

inline DesignExpansion build_design_expansion(const MnpModel& model) {
  model.validate();
  const int n = model.data.n, p = model.data.p, L = model.data.L;
  DesignExpansion ex;
  ex.block_size = L - 1;
  ex.n = n;
  ex.xbar.resize(n * (L - 1), p * (L - 1));
  ex.lambda.reserve(n);
  for (int i = 0; i < n; ++i) {
    const int yi = model.data.y[i];
    ex.xbar.middleRows(i * (L - 1), L - 1) =
        build_observation_design(model.data.X.row(i), yi, L);
    const ContrastMatrix c = build_contrast(yi, L);
    const Eigen::MatrixXd block = c.full * model.sigma * c.full.transpose();
    ex.lambda.push_back(chol_psd(block, 1e-8, "Lambda block " + std::to_string(i + 1)));
  }
  return ex;
}

// Log-likelihood: sum over observations of the log (L-1)-variate CDF of the
// design block at beta. Summing logs rather than multiplying keeps n(L-1)
// large from underflowing.
inline double log_likelihood(const Eigen::VectorXd& beta, const DesignExpansion& ex,
                             double cdf_tol = 1e-8) {
  if (beta.size() != ex.xbar.cols()) throw ArgumentError("log_likelihood: beta dimension mismatch");
  MvnCdfOptions opt;
  opt.tol = cdf_tol;
  opt.rel_tol = 1e-6;
  double out = 0.0;
  for (int i = 0; i < ex.n; ++i) {
    const Eigen::VectorXd u = ex.xbar_block(i) * beta;
    out += mvn_log_cdf(u, ex.lambda[i], opt);
  }
  return out;
}

inline double likelihood(const Eigen::VectorXd& beta, const DesignExpansion& ex,
                         double cdf_tol = 1e-8) {
  return std::exp(log_likelihood(beta, ex, cdf_tol));
}

// P(y = ell | beta, x) for every class. Entry ell is the (L-1)-variate CDF
// of the class-ell design block; the vector sums to one up to CDF error.
inline Eigen::VectorXd choice_probabilities(const Eigen::VectorXd& beta, const Eigen::VectorXd& x,
                                            const MnpModel& model, double cdf_tol = 1e-8) {
  const int L = model.data.L;
  if (beta.size() != model.coef_dim()) throw ArgumentError("choice_probabilities: beta dimension mismatch");
  if (x.size() != model.data.p) throw ArgumentError("choice_probabilities: covariate dimension mismatch");
  MvnCdfOptions opt;
  opt.tol = cdf_tol;
  Eigen::VectorXd probs(L);
  for (int ell = 1; ell <= L; ++ell) {
    const Eigen::MatrixXd design = build_observation_design(x, ell, L);
    const ContrastMatrix c = build_contrast(ell, L);
    const PdMatrix block = chol_psd(c.full * model.sigma * c.full.transpose(), 1e-8,
                                    "choice covariance");
    probs[ell - 1] = mvn_cdf(design * beta, block, opt).value;
  }
  return probs;
}

struct SimulationTruth {
  Eigen::VectorXd beta;      // p(L-1) ground-truth coefficients
  std::uint64_t seed = 0;
  Eigen::MatrixXd utilities; // n x L latent utilities
};

// Synthetic dataset from the latent-utility mechanism: z_i = B x_i + eps_i
// with eps_i ~ N(0, Sigma) and y_i the argmax class. Ties (measure zero)
// break toward the lowest class index. Covariates are i.i.d. standard
// normal unless a column sampler is supplied.
inline std::pair<Dataset, SimulationTruth> simulate_dataset(
    const Eigen::VectorXd& beta_true, int n, int p, int L, const Eigen::MatrixXd& sigma,
    std::uint64_t seed, const Eigen::MatrixXd* covariates = nullptr) {
  if (n < 1 || p < 1 || L < 2) throw ArgumentError("simulate_dataset: need n >= 1, p >= 1, L >= 2");
  if (beta_true.size() != p * (L - 1)) throw ArgumentError("simulate_dataset: beta dimension mismatch");
  const PdMatrix sig = chol_psd(sigma, 1e-8, "noise covariance");

  RngStream root(seed);
  RngStream x_stream = root.split(1);
  RngStream eps_stream = root.split(2);

  Eigen::MatrixXd coef(L, p);  // rows are per-class coefficient vectors, class L zero
  for (int ell = 0; ell < L - 1; ++ell) coef.row(ell) = beta_true.segment(ell * p, p).transpose();
  coef.row(L - 1).setZero();

  Dataset data;
  data.n = n;
  data.p = p;
  data.L = L;
  data.y.resize(n);
  if (covariates) {
    if (covariates->rows() != n || covariates->cols() != p)
      throw ArgumentError("simulate_dataset: covariate matrix shape mismatch");
    data.X = *covariates;
  } else {
    data.X.resize(n, p);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < p; ++j) data.X(i, j) = x_stream.gaussian();
  }

  SimulationTruth truth;
  truth.beta = beta_true;
  truth.seed = seed;
  truth.utilities.resize(n, L);

  Eigen::VectorXd g(L);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < L; ++j) g[j] = eps_stream.gaussian();
    const Eigen::VectorXd z =
        coef * data.X.row(i).transpose() + sig.factor.triangularView<Eigen::Lower>() * g;
    int best = 0;
    for (int j = 1; j < L; ++j)
      if (z[j] > z[best]) best = j;
    data.y[i] = best + 1;
    truth.utilities.row(i) = z.transpose();
  }
  data.validate();
  return {std::move(data), std::move(truth)};
}

// Ground-truth coefficients drawn from the prior N(0, nu2 I).
inline Eigen::VectorXd beta_from_prior(int p, int L, double nu2, std::uint64_t seed) {
  RngStream stream = RngStream(seed).split(7);
  Eigen::VectorXd beta(p * (L - 1));
  const double nu = std::sqrt(nu2);
  for (int i = 0; i < beta.size(); ++i) beta[i] = nu * stream.gaussian();
  return beta;
}

}  // namespace mnp
