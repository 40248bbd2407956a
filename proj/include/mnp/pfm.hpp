#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mnp/errors.hpp"
#include "mnp/linalg.hpp"
#include "mnp/model.hpp"
#include "mnp/mvn.hpp"
#include "mnp/rng.hpp"
#include "mnp/sun.hpp"
#include "mnp/tmvn.hpp"

namespace mnp {

// Quantities fixed for the whole CAVI run. With the Woodbury split
// (Lambda + nu^2 Xbar Xbar^T)^-1 = Lambda^-1 - H, everything downstream
// works blockwise: H is stored as its n^2 blocks, never assembled dense.
struct PfmPrecomp {
  int n = 0;
  int block = 0;  // L - 1
  int q = 0;      // p (L - 1)

  Eigen::MatrixXd v;                   // q x q: (nu^-2 I + Xbar^T Lambda^-1 Xbar)^-1
  PdMatrix v_pd;                       // factor of v, for beta | z sampling
  Eigen::MatrixXd a;                   // q x n(L-1): V Xbar^T Lambda^-1
  std::vector<std::vector<Eigen::MatrixXd>> h_blocks;  // H[i][j], block x block
  std::vector<PdMatrix> sigma_star;    // per-block conditional covariance
  std::vector<Eigen::MatrixXd> prec_blocks;  // Lambda[ii]^-1 - H[ii]
  double logdet_m = 0.0;               // log det(Lambda + nu^2 Xbar Xbar^T)

  auto a_block(int i) const { return a.middleCols(i * block, block); }
};

inline PfmPrecomp precompute(const MnpModel& model, const DesignExpansion& ex) {
  PfmPrecomp pre;
  pre.n = ex.n;
  pre.block = ex.block_size;
  pre.q = static_cast<int>(ex.xbar.cols());
  const double nu2 = model.nu2;

  // G_i = Lambda[ii]^-1 Xbar[i] feeds every later product.
  std::vector<Eigen::MatrixXd> gi(pre.n);
  double logdet_lambda = 0.0;
  for (int i = 0; i < pre.n; ++i) {
    gi[i] = ex.lambda[i].solve(ex.xbar_block(i));
    logdet_lambda += ex.lambda[i].log_det();
  }

  Eigen::MatrixXd v_inv = Eigen::MatrixXd::Identity(pre.q, pre.q) / nu2;
  for (int i = 0; i < pre.n; ++i) v_inv += ex.xbar_block(i).transpose() * gi[i];
  v_inv = 0.5 * (v_inv + v_inv.transpose()).eval();
  const PdMatrix v_inv_pd = chol_psd(v_inv, 1e-8, "V^-1");

  pre.v = v_inv_pd.inverse();
  pre.v = 0.5 * (pre.v + pre.v.transpose()).eval();
  pre.v_pd = chol_psd(pre.v, 1e-8, "V");
  pre.logdet_m = logdet_lambda + pre.q * std::log(nu2) + v_inv_pd.log_det();

  pre.a.resize(pre.q, pre.n * pre.block);
  for (int i = 0; i < pre.n; ++i) pre.a.middleCols(i * pre.block, pre.block) = pre.v * gi[i].transpose();

  // H[i][j] = G_i V G_j^T, via the cached right factors V G_j^T.
  std::vector<Eigen::MatrixXd> vg(pre.n);
  for (int j = 0; j < pre.n; ++j) vg[j] = pre.v * gi[j].transpose();
  pre.h_blocks.assign(pre.n, std::vector<Eigen::MatrixXd>(pre.n));
  for (int i = 0; i < pre.n; ++i)
    for (int j = 0; j < pre.n; ++j) pre.h_blocks[i][j] = gi[i] * vg[j];

  pre.sigma_star.reserve(pre.n);
  pre.prec_blocks.reserve(pre.n);
  for (int i = 0; i < pre.n; ++i) {
    Eigen::MatrixXd prec = ex.lambda[i].inverse() - pre.h_blocks[i][i];
    prec = 0.5 * (prec + prec.transpose()).eval();
    PdMatrix prec_pd;
    try {
      prec_pd = chol_psd(prec, 1e-8, "block precision");
    } catch (const NumericError&) {
      throw NumericError("precompute: conditional precision of block " + std::to_string(i + 1) +
                         " is not positive definite");
    }
    Eigen::MatrixXd sstar = prec_pd.inverse();
    sstar = 0.5 * (sstar + sstar.transpose()).eval();
    pre.prec_blocks.push_back(std::move(prec));
    pre.sigma_star.push_back(chol_psd(sstar, 1e-8, "Sigma* block " + std::to_string(i + 1)));
  }
  return pre;
}

// Max-norm of (Lambda + nu^2 Xbar Xbar^T)(Lambda^-1 - H) - I. Dense
// assembly; diagnostic and test use only.
inline double woodbury_residual(const PfmPrecomp& pre, const MnpModel& model,
                                const DesignExpansion& ex) {
  const int h = ex.total_dim();
  Eigen::MatrixXd m = model.nu2 * (ex.xbar * ex.xbar.transpose()) + ex.lambda_dense();
  Eigen::MatrixXd m_inv = Eigen::MatrixXd::Zero(h, h);
  for (int i = 0; i < pre.n; ++i) {
    for (int j = 0; j < pre.n; ++j) {
      Eigen::MatrixXd blk = -pre.h_blocks[i][j];
      if (i == j) blk += ex.lambda[i].inverse();
      m_inv.block(i * pre.block, j * pre.block, pre.block, pre.block) = blk;
    }
  }
  return (m * m_inv - Eigen::MatrixXd::Identity(h, h)).cwiseAbs().maxCoeff();
}

// CAVI iterate: the per-block variational means (the only free parameter)
// plus the tilt vectors mu_i that define each truncated-normal factor.
struct PfmState {
  std::vector<Eigen::VectorXd> m;   // E_q[z_i]
  std::vector<Eigen::VectorXd> mu;  // block tilt means; set by the first sweep
  int sweep_count = 0;
  bool converged = false;
  double last_delta = kInf;
};

enum class PfmInit { kHalfNormal, kOnes };

inline PfmState init_state(const DesignExpansion& ex, PfmInit policy = PfmInit::kHalfNormal) {
  PfmState st;
  st.m.reserve(ex.n);
  const double c = std::sqrt(2.0 / M_PI);
  for (int i = 0; i < ex.n; ++i) {
    if (policy == PfmInit::kHalfNormal) {
      st.m.push_back(c * ex.lambda[i].values.diagonal().array().sqrt().matrix());
    } else {
      st.m.push_back(Eigen::VectorXd::Ones(ex.block_size));
    }
  }
  return st;
}

struct CaviOptions {
  double eps = 1e-8;
  int max_sweeps = 1000;
  PfmInit init = PfmInit::kHalfNormal;
  std::optional<MomentMethod> moment_method;  // unset: analytic when block <= cap
  int mc_draws = 10000;
  int analytic_cap = 8;
};

namespace detail {

inline MomentMethod resolve_moment_method(const CaviOptions& opt, int block) {
  if (opt.moment_method) return *opt.moment_method;
  return block <= opt.analytic_cap ? MomentMethod::kAnalytic : MomentMethod::kMc;
}

inline TmvnMomentOptions block_moment_options(const CaviOptions& opt, MomentMethod method) {
  TmvnMomentOptions mo;
  mo.method = method;
  mo.mc_draws = opt.mc_draws;
  mo.analytic_cap = opt.analytic_cap;
  return mo;
}

}  // namespace detail

// One full coordinate sweep in block order 1..n. Block i reads the freshest
// neighbor means: already-updated values for j < i, previous-sweep values
// for j > i. Updates are strictly sequential; do not parallelize the loop.
inline PfmState cavi_sweep(PfmState state, const PfmPrecomp& pre, const CaviOptions& opt = {},
                           RngStream* rng = nullptr) {
  if (static_cast<int>(state.m.size()) != pre.n) throw ArgumentError("cavi_sweep: state size mismatch");
  const MomentMethod method = detail::resolve_moment_method(opt, pre.block);
  const TmvnMomentOptions mo = detail::block_moment_options(opt, method);
  if (state.mu.empty()) state.mu.assign(pre.n, Eigen::VectorXd::Zero(pre.block));

  double delta = 0.0;
  for (int i = 0; i < pre.n; ++i) {
    Eigen::VectorXd tilt = Eigen::VectorXd::Zero(pre.block);
    for (int j = 0; j < pre.n; ++j) {
      if (j == i) continue;
      tilt.noalias() += pre.h_blocks[i][j] * state.m[j];
    }
    const Eigen::VectorXd mu_i = pre.sigma_star[i].values * tilt;
    TruncatedMvn t = orthant_truncated(mu_i, pre.sigma_star[i]);
    Eigen::VectorXd m_new;
    try {
      m_new = tmvn_moments(t, mo, rng).mean;
    } catch (const Error& e) {
      throw NumericError("cavi_sweep: moment update failed at block " + std::to_string(i + 1) +
                         ": " + e.what());
    }
    delta = std::max(delta, (m_new - state.m[i]).cwiseAbs().maxCoeff());
    state.m[i] = std::move(m_new);
    state.mu[i] = mu_i;
  }
  ++state.sweep_count;
  state.last_delta = delta;
  return state;
}

// Converged blocked mean-field posterior: q(beta, z) = N(beta; A z, V) x
// prod_i TN(z_i; mu_i, Sigma*_i, orthant).
struct VbPosterior {
  PfmPrecomp precomp;
  PfmState state;
  std::vector<Eigen::MatrixXd> z_cov_blocks;  // covariance of each q(z_i)
};

inline VbPosterior run_cavi(const MnpModel& model, const DesignExpansion& ex,
                            const CaviOptions& opt = {}, RngStream* rng = nullptr) {
  if (!(opt.eps > 0.0)) throw ArgumentError("run_cavi: eps must be positive");
  VbPosterior vb;
  vb.precomp = precompute(model, ex);
  vb.state = init_state(ex, opt.init);
  while (vb.state.sweep_count < opt.max_sweeps) {
    vb.state = cavi_sweep(std::move(vb.state), vb.precomp, opt, rng);
    if (vb.state.last_delta < opt.eps) {
      vb.state.converged = true;
      break;
    }
  }
  const MomentMethod method = detail::resolve_moment_method(opt, vb.precomp.block);
  const TmvnMomentOptions mo = detail::block_moment_options(opt, method);
  vb.z_cov_blocks.reserve(vb.precomp.n);
  for (int i = 0; i < vb.precomp.n; ++i) {
    TruncatedMvn t = orthant_truncated(vb.state.mu[i], vb.precomp.sigma_star[i]);
    vb.z_cov_blocks.push_back(tmvn_moments(t, mo, rng).cov);
  }
  return vb;
}

namespace detail {

inline void require_converged(const VbPosterior& vb, const char* who) {
  if (!vb.state.converged)
    throw NonConvergenceError(std::string(who) + ": variational state not converged; " +
                              std::to_string(vb.state.sweep_count) + " sweeps, last delta " +
                              std::to_string(vb.state.last_delta));
}

}  // namespace detail

// Approximate posterior moments of beta by total expectation / variance:
// E beta = A E z, var beta = V + A var(z) A^T with var(z) block diagonal.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd> vb_beta_moments(const VbPosterior& vb,
                                                                   bool force = false) {
  if (!force) detail::require_converged(vb, "vb_beta_moments");
  const PfmPrecomp& pre = vb.precomp;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(pre.q);
  Eigen::MatrixXd cov = pre.v;
  for (int i = 0; i < pre.n; ++i) {
    mean.noalias() += pre.a_block(i) * vb.state.m[i];
    cov.noalias() += pre.a_block(i) * vb.z_cov_blocks[i] * pre.a_block(i).transpose();
  }
  cov = 0.5 * (cov + cov.transpose()).eval();
  return {std::move(mean), std::move(cov)};
}

// Draws from the variational posterior of beta: z blocks sampled
// independently (each only L-1 dimensional), then beta | z ~ N(A z, V).
inline PosteriorDraws vb_sample_beta(const VbPosterior& vb, int count, RngStream& rng,
                                     bool force = false) {
  if (!force) detail::require_converged(vb, "vb_sample_beta");
  if (count < 1) throw ArgumentError("vb_sample_beta: count must be positive");
  const PfmPrecomp& pre = vb.precomp;

  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(count, pre.q);
  bool all_exact = true;
  double min_acc = 1.0;
  for (int i = 0; i < pre.n; ++i) {
    RngStream block_stream = rng.split(1000 + static_cast<std::uint64_t>(i));
    TruncatedMvn t = orthant_truncated(vb.state.mu[i], pre.sigma_star[i]);
    TmvnSampleResult zi = tmvn_sample(t, count, block_stream);
    all_exact = all_exact && zi.diag.exact;
    min_acc = std::min(min_acc, zi.diag.acceptance_estimate);
    out.noalias() += zi.draws * pre.a_block(i).transpose();
  }
  RngStream noise_stream = rng.split(2);
  Eigen::MatrixXd g(count, pre.q);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < pre.q; ++j) g(i, j) = noise_stream.gaussian();
  out.noalias() += g * pre.v_pd.factor.triangularView<Eigen::Lower>().transpose();

  PosteriorDraws draws;
  draws.samples = std::move(out);
  draws.seed = rng.seed();
  draws.sampler_diag.method = all_exact ? "blockwise-rejection" : "blockwise-mixed";
  draws.sampler_diag.exact = all_exact;
  draws.sampler_diag.acceptance_estimate = min_acc;
  return draws;
}

// Evidence lower bound of the current iterate; exact up to the accuracy of
// the block moments and normalizers, so successive sweeps must not decrease
// it. Equals log evidence exactly when the factorization is lossless (n=1).
inline double elbo(const PfmState& state, const PfmPrecomp& pre, const CaviOptions& opt = {},
                   RngStream* rng = nullptr) {
  if (state.sweep_count < 1 || state.mu.empty())
    throw ArgumentError("elbo: state needs at least one completed sweep");
  const MomentMethod method = detail::resolve_moment_method(opt, pre.block);
  const TmvnMomentOptions mo = detail::block_moment_options(opt, method);

  const int h = pre.n * pre.block;
  constexpr double kLog2Pi = 1.8378770664093454836;

  double quad = 0.0;
  double entropy = 0.0;
  std::vector<Eigen::VectorXd> means(pre.n);
  for (int i = 0; i < pre.n; ++i) {
    TruncatedMvn t = orthant_truncated(state.mu[i], pre.sigma_star[i]);
    const TmvnMoments mom = tmvn_moments(t, mo, rng);
    means[i] = mom.mean;
    const Eigen::MatrixXd second = mom.cov + mom.mean * mom.mean.transpose();
    quad += (pre.prec_blocks[i].array() * second.array()).sum();

    const Eigen::VectorXd shift = mom.mean - state.mu[i];
    const double trace_term =
        (pre.prec_blocks[i].array() * (mom.cov + shift * shift.transpose()).array()).sum();
    const double log_norm = std::log(
        std::max(mvn_cdf(state.mu[i], pre.sigma_star[i], MvnCdfOptions{1e-10, 1e-9}).value,
                 1e-300));
    entropy += 0.5 * (pre.block * kLog2Pi + pre.sigma_star[i].log_det()) + 0.5 * trace_term +
               log_norm;
  }
  for (int i = 0; i < pre.n; ++i)
    for (int j = 0; j < pre.n; ++j) {
      if (j == i) continue;
      quad -= means[i].dot(pre.h_blocks[i][j] * means[j]);
    }

  return -0.5 * (h * kLog2Pi + pre.logdet_m + quad) + entropy;
}

}  // namespace mnp
