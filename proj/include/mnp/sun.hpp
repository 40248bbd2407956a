#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <utility>

#include "mnp/errors.hpp"
#include "mnp/linalg.hpp"
#include "mnp/model.hpp"
#include "mnp/mvn.hpp"
#include "mnp/rng.hpp"
#include "mnp/tmvn.hpp"

namespace mnp {

// Parameters (xi, Omega, Delta, gamma, Gamma) of a unified skew-normal law
// on R^q with latent truncation dimension h. The container is general even
// though the posterior construction only ever produces xi = 0, gamma = 0:
// the extra generality keeps the classical skew-normal reductions testable.
struct SunParams {
  int q = 0;
  int h = 0;
  Eigen::VectorXd xi;         // q
  Eigen::MatrixXd omega_mat;  // q x q PD
  Eigen::MatrixXd delta;      // q x h
  Eigen::VectorXd gamma;      // h
  Eigen::MatrixXd gamma_mat;  // h x h correlation

  Eigen::VectorXd omega_scale() const { return omega_mat.diagonal().array().sqrt(); }

  Eigen::MatrixXd omega_bar() const {
    const Eigen::VectorXd inv = omega_scale().cwiseInverse();
    Eigen::MatrixXd ob = inv.asDiagonal() * omega_mat * inv.asDiagonal();
    ob = 0.5 * (ob + ob.transpose()).eval();
    ob.diagonal().setOnes();
    return ob;
  }

  void validate() const {
    if (q < 1 || h < 1) throw ValidationError("sun: dimensions must be positive");
    if (xi.size() != q || omega_mat.rows() != q || omega_mat.cols() != q ||
        delta.rows() != q || delta.cols() != h || gamma.size() != h ||
        gamma_mat.rows() != h || gamma_mat.cols() != h)
      throw ValidationError("sun: parameter block dimensions inconsistent");
    if ((gamma_mat.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12)
      throw ValidationError("sun: Gamma diagonal must be one");
    PdMatrix gpd = chol_psd(gamma_mat, 1e-8, "Gamma");
    chol_psd(omega_mat, 1e-8, "Omega");
    // Additive-representation covariance must be at least PSD.
    const Eigen::MatrixXd vcov = omega_bar() - delta * gpd.solve(delta.transpose());
    chol_psd(0.5 * (vcov + vcov.transpose()), 1e-6, "OmegaBar - Delta Gamma^-1 Delta^T");
  }
};

struct PosteriorDraws {
  Eigen::MatrixXd samples;  // N x q
  std::uint64_t seed = 0;
  TmvnDiagnostics sampler_diag;
};

// Exact posterior parameters for the Gaussian-prior model: with
// G = nu^2 Xbar Xbar^T + Lambda and s the square root of its diagonal,
// Omega = nu^2 I, Delta = nu Xbar^T s^-1, Gamma = s^-1 G s^-1, xi = gamma = 0.
inline SunParams posterior_params(const MnpModel& model, const DesignExpansion& ex) {
  const int q = model.coef_dim();
  const int h = ex.total_dim();
  const double nu2 = model.nu2;

  Eigen::MatrixXd g = nu2 * (ex.xbar * ex.xbar.transpose());
  for (int i = 0; i < ex.n; ++i)
    g.block(i * ex.block_size, i * ex.block_size, ex.block_size, ex.block_size) +=
        ex.lambda[i].values;
  g = 0.5 * (g + g.transpose()).eval();
  chol_psd(g, 1e-6, "posterior scale matrix");  // numeric error if not PD

  const Eigen::VectorXd s = g.diagonal().array().sqrt();
  const Eigen::VectorXd s_inv = s.cwiseInverse();

  SunParams out;
  out.q = q;
  out.h = h;
  out.xi = Eigen::VectorXd::Zero(q);
  out.omega_mat = nu2 * Eigen::MatrixXd::Identity(q, q);
  out.delta = std::sqrt(nu2) * ex.xbar.transpose() * s_inv.asDiagonal();
  out.gamma = Eigen::VectorXd::Zero(h);
  out.gamma_mat = s_inv.asDiagonal() * g * s_inv.asDiagonal();
  out.gamma_mat = (0.5 * (out.gamma_mat + out.gamma_mat.transpose())).eval();
  out.gamma_mat.diagonal().setOnes();
  return out;
}

// Density phi_q(beta - xi; Omega) * Phi_h[gamma + Delta^T OmegaBar^-1
// omega^-1 (beta - xi); Gamma - Delta^T OmegaBar^-1 Delta] / Phi_h(gamma;
// Gamma). The log form sums the three log terms.
inline double sun_log_density(const Eigen::VectorXd& beta, const SunParams& sun,
                              const MvnCdfOptions& cdf_opt = {.tol = 1e-9, .rel_tol = 1e-6}) {
  if (beta.size() != sun.q) throw ArgumentError("sun_log_density: beta dimension mismatch");
  const Eigen::VectorXd centered = beta - sun.xi;

  const PdMatrix omega_pd = chol_psd(sun.omega_mat, 1e-8, "Omega");
  const double quad = centered.dot(omega_pd.solve(centered));
  const double log_phi =
      -0.5 * (sun.q * 1.8378770664093454836 + omega_pd.log_det() + quad);

  const Eigen::MatrixXd obar = sun.omega_bar();
  const PdMatrix obar_pd = chol_psd(obar, 1e-8, "OmegaBar");
  const Eigen::VectorXd t = centered.cwiseQuotient(sun.omega_scale());
  const Eigen::VectorXd u = sun.gamma + sun.delta.transpose() * obar_pd.solve(t);

  Eigen::MatrixXd wnum = sun.gamma_mat - sun.delta.transpose() * obar_pd.solve(sun.delta);
  wnum = 0.5 * (wnum + wnum.transpose()).eval();
  const PdMatrix wnum_pd = chol_psd(wnum, 1e-6, "conditional Gamma");
  const PdMatrix gamma_pd = chol_psd(sun.gamma_mat, 1e-8, "Gamma");

  const double log_num = mvn_log_cdf(u, wnum_pd, cdf_opt);
  const double log_den = mvn_log_cdf(sun.gamma, gamma_pd, cdf_opt);
  return log_phi + log_num - log_den;
}

inline double sun_density(const Eigen::VectorXd& beta, const SunParams& sun,
                          const MvnCdfOptions& cdf_opt = {.tol = 1e-9, .rel_tol = 1e-6}) {
  return std::exp(sun_log_density(beta, sun, cdf_opt));
}

struct EvidenceResult {
  double value = 0.0;
  double log_value = 0.0;
  double error = 0.0;
};

// Marginal likelihood p(y): marginalizing the coefficients leaves the
// utility differences centered at zero with covariance nu^2 Xbar Xbar^T +
// Lambda, so the evidence is that Gaussian's zero orthant probability.
inline EvidenceResult evidence(const MnpModel& model, const DesignExpansion& ex,
                               const MvnCdfOptions& cdf_opt = {.tol = 1e-9, .rel_tol = 1e-5}) {
  const int h = ex.total_dim();
  Eigen::MatrixXd g = model.nu2 * (ex.xbar * ex.xbar.transpose());
  for (int i = 0; i < ex.n; ++i)
    g.block(i * ex.block_size, i * ex.block_size, ex.block_size, ex.block_size) +=
        ex.lambda[i].values;
  g = 0.5 * (g + g.transpose()).eval();
  const PdMatrix gpd = chol_psd(g, 1e-6, "marginal utility covariance");
  const CdfResult c = mvn_cdf(Eigen::VectorXd::Zero(h), gpd, cdf_opt);
  EvidenceResult out;
  out.value = c.value;
  out.log_value = (c.value > 0.0) ? std::log(c.value) : -kInf;
  out.error = c.error;
  return out;
}

struct SunSampleDebug {
  Eigen::MatrixXd v0;  // N x q Gaussian part
  Eigen::MatrixXd v1;  // N x h truncated part
  double v0_cov_jitter = 0.0;
};

// i.i.d.-capable sampler from the additive representation
// beta = xi + omega (V0 + Delta Gamma^-1 V1) with V0 Gaussian and V1 the
// gamma-shifted orthant truncation of N(0, Gamma). Draws are i.i.d. exactly
// when the truncated part resolves to rejection sampling; the diagnostics
// say which method actually ran.
inline PosteriorDraws sun_sample(const SunParams& sun, int count, RngStream& rng,
                                 TruncMethod method = TruncMethod::kAuto,
                                 SunSampleDebug* debug = nullptr) {
  if (count < 1) throw ArgumentError("sun_sample: count must be positive");
  const PdMatrix gamma_pd = chol_psd(sun.gamma_mat, 1e-8, "Gamma");

  Eigen::MatrixXd vcov = sun.omega_bar() - sun.delta * gamma_pd.solve(sun.delta.transpose());
  vcov = 0.5 * (vcov + vcov.transpose()).eval();
  const PdMatrix vcov_pd = chol_psd(vcov, 1e-6, "V0 covariance");

  RngStream v0_stream = rng.split(11);
  RngStream v1_stream = rng.split(12);

  const Eigen::MatrixXd v0 = mvn_sample(Eigen::VectorXd::Zero(sun.q), vcov_pd, count, v0_stream);

  TruncatedMvn trunc;
  trunc.mean = Eigen::VectorXd::Zero(sun.h);
  trunc.cov = gamma_pd;
  trunc.lower = -sun.gamma;
  TmvnSampleOptions topt;
  topt.method = method;
  TmvnSampleResult v1 = tmvn_sample(trunc, count, v1_stream, topt);

  // Delta Gamma^-1 V1 for all draws at once: solve Gamma K = Delta^T.
  const Eigen::MatrixXd k = gamma_pd.solve(sun.delta.transpose());  // h x q
  Eigen::MatrixXd combined = v0 + v1.draws * k;                     // N x q
  combined = combined * sun.omega_scale().asDiagonal();
  combined.rowwise() += sun.xi.transpose();

  if (debug) {
    debug->v0 = v0;
    debug->v1 = v1.draws;
    debug->v0_cov_jitter = vcov_pd.jitter_applied;
  }

  PosteriorDraws out;
  out.samples = std::move(combined);
  out.seed = rng.seed();
  out.sampler_diag = v1.diag;
  return out;
}

}  // namespace mnp
