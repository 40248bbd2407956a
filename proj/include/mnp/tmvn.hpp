#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "mnp/errors.hpp"
#include "mnp/linalg.hpp"
#include "mnp/mvn.hpp"
#include "mnp/normal.hpp"
#include "mnp/rng.hpp"

namespace mnp {

// Multivariate normal truncated below: Z ~ N(mean, cov) conditioned on
// Z >= lower componentwise. Coordinates with lower = -inf are untruncated;
// upper bounds are fixed at +inf throughout.
struct TruncatedMvn {
  Eigen::VectorXd mean;
  PdMatrix cov;
  Eigen::VectorXd lower;

  int dim() const { return static_cast<int>(mean.size()); }
};

inline TruncatedMvn orthant_truncated(const Eigen::VectorXd& mean, PdMatrix cov) {
  TruncatedMvn t;
  t.lower = Eigen::VectorXd::Zero(mean.size());
  t.mean = mean;
  t.cov = std::move(cov);
  return t;
}

// P(Z >= lower) for Z ~ N(mean, cov): by central symmetry this is the lower
// CDF of mean - lower.
inline CdfResult tmvn_region_probability(const TruncatedMvn& t, const MvnCdfOptions& opt = {}) {
  Eigen::VectorXd u(t.dim());
  for (int i = 0; i < t.dim(); ++i)
    u[i] = (t.lower[i] == -kInf) ? kInf : t.mean[i] - t.lower[i];
  return mvn_cdf(u, t.cov, opt);
}

enum class TruncMethod { kAuto, kRejection, kGibbs };

struct TmvnDiagnostics {
  std::string method;            // "rejection" or "gibbs"
  bool exact = false;            // rejection draws are i.i.d. from the target
  double acceptance_estimate = 0.0;
  double acceptance_observed = 0.0;  // rejection only
  long proposals = 0;                // rejection only
  double ess_proxy = 0.0;            // gibbs only, lag-1 autocorrelation based
  int burn_in = 0;
  int thin = 0;
};

struct TmvnSampleResult {
  Eigen::MatrixXd draws;  // count x h
  TmvnDiagnostics diag;
};

struct TmvnSampleOptions {
  TruncMethod method = TruncMethod::kAuto;
  int gibbs_burn_in = 500;
  int gibbs_thin = 5;
  double auto_min_acceptance = 0.01;       // auto picks rejection above this
  double rejection_min_acceptance = 1e-12; // explicit rejection refuses below
  double acceptance_cdf_tol = 1e-3;        // accuracy of the acceptance estimate
};

namespace detail {

// Draw from N(mu, sigma^2) truncated to [lower, inf) by inverting the upper
// tail; one uniform per draw. Far past the 1e-300 tail the conditional is
// effectively exponential and we switch to that limit.
inline double trunc_normal_lower(double mu, double sigma, double lower, RngStream& rng) {
  if (lower == -kInf) return mu + sigma * rng.gaussian();
  const double alpha = (lower - mu) / sigma;
  const double tail = normal_sf(alpha);
  const double v = rng.uniform();
  double z;
  if (tail > 1e-300) {
    z = -normal_quantile(std::max(v * tail, 5e-324));
    if (z < alpha) z = alpha;
  } else {
    z = alpha - std::log1p(-v) / std::max(alpha, 1.0);
  }
  return mu + sigma * z;
}

inline double gibbs_ess_proxy(const Eigen::MatrixXd& draws) {
  const long n = draws.rows();
  if (n < 4) return static_cast<double>(n);
  double ess_sum = 0.0;
  for (int j = 0; j < draws.cols(); ++j) {
    const auto col = draws.col(j);
    const double mu = col.mean();
    double c0 = 0.0, c1 = 0.0;
    for (long i = 0; i < n; ++i) {
      const double d = col[i] - mu;
      c0 += d * d;
      if (i + 1 < n) c1 += d * (col[i + 1] - mu);
    }
    double rho = (c0 > 0.0) ? (c1 / c0) : 0.0;
    rho = std::clamp(rho, -0.99, 0.99);
    ess_sum += std::clamp(n * (1.0 - rho) / (1.0 + rho), 1.0, static_cast<double>(n));
  }
  return ess_sum / draws.cols();
}

}  // namespace detail

// Draws from a lower-truncated multivariate normal.
//
// rejection: exact i.i.d. (propose N(mean, cov), keep draws inside the
// region). gibbs: systematic-scan coordinate sampler with burn-in and
// thinning; stationary but serially dependent, flagged in diagnostics.
// auto resolves to rejection when the estimated acceptance rate is at least
// auto_min_acceptance, gibbs otherwise.
inline TmvnSampleResult tmvn_sample(const TruncatedMvn& t, int count, RngStream& rng,
                                    const TmvnSampleOptions& opt = {}) {
  const int h = t.dim();
  if (t.lower.size() != h || t.cov.dim() != h) throw ArgumentError("tmvn_sample: dimension mismatch");
  if (count < 1) throw ArgumentError("tmvn_sample: count must be positive");

  MvnCdfOptions cdf_opt;
  cdf_opt.tol = opt.acceptance_cdf_tol;
  cdf_opt.rel_tol = 0.05;
  const double acc_est = tmvn_region_probability(t, cdf_opt).value;
  if (acc_est <= 1e-300) throw NumericError("tmvn_sample: truncation region has vanishing probability");

  TruncMethod method = opt.method;
  if (method == TruncMethod::kAuto)
    method = (acc_est >= opt.auto_min_acceptance) ? TruncMethod::kRejection : TruncMethod::kGibbs;

  TmvnSampleResult out;
  out.diag.acceptance_estimate = acc_est;

  if (method == TruncMethod::kRejection) {
    if (acc_est < opt.rejection_min_acceptance)
      throw NumericError("tmvn_sample: rejection infeasible, estimated acceptance " +
                         std::to_string(acc_est));
    out.diag.method = "rejection";
    out.diag.exact = true;
    out.draws.resize(count, h);
    Eigen::VectorXd g(h), x(h);
    long proposals = 0;
    const long cap = static_cast<long>(200.0 * count / std::max(acc_est, 1e-12)) + 1000000L;
    int got = 0;
    while (got < count) {
      if (++proposals > cap)
        throw NumericError("tmvn_sample: rejection exceeded proposal budget");
      for (int j = 0; j < h; ++j) g[j] = rng.gaussian();
      x = t.mean + t.cov.factor.triangularView<Eigen::Lower>() * g;
      bool ok = true;
      for (int j = 0; j < h; ++j) {
        if (x[j] < t.lower[j]) { ok = false; break; }
      }
      if (ok) out.draws.row(got++) = x.transpose();
    }
    out.diag.proposals = proposals;
    out.diag.acceptance_observed = static_cast<double>(count) / static_cast<double>(proposals);
    return out;
  }

  // Gibbs. Precision matrix once; the residual r = Q (z - mean) is updated
  // incrementally so one full scan costs O(h^2).
  out.diag.method = "gibbs";
  out.diag.exact = false;
  out.diag.burn_in = opt.gibbs_burn_in;
  out.diag.thin = opt.gibbs_thin;
  const Eigen::MatrixXd q = t.cov.inverse();
  Eigen::VectorXd z(h);
  for (int j = 0; j < h; ++j) {
    const double sd = std::sqrt(t.cov.values(j, j));
    z[j] = (t.lower[j] == -kInf) ? t.mean[j] : std::max(t.mean[j], t.lower[j] + 0.25 * sd);
  }
  Eigen::VectorXd r = q * (z - t.mean);
  out.draws.resize(count, h);
  int emitted = 0;
  const long total_sweeps = opt.gibbs_burn_in + static_cast<long>(count) * opt.gibbs_thin;
  for (long sweep = 1; sweep <= total_sweeps; ++sweep) {
    for (int j = 0; j < h; ++j) {
      const double qjj = q(j, j);
      const double cond_mean = z[j] - r[j] / qjj;
      const double cond_sd = 1.0 / std::sqrt(qjj);
      const double znew = detail::trunc_normal_lower(cond_mean, cond_sd, t.lower[j], rng);
      const double delta = znew - z[j];
      if (delta != 0.0) {
        r += q.col(j) * delta;
        z[j] = znew;
      }
    }
    if (sweep > opt.gibbs_burn_in && (sweep - opt.gibbs_burn_in) % opt.gibbs_thin == 0)
      out.draws.row(emitted++) = z.transpose();
  }
  out.diag.ess_proxy = detail::gibbs_ess_proxy(out.draws);
  return out;
}

struct TmvnMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

enum class MomentMethod { kAnalytic, kMc };

struct TmvnMomentOptions {
  MomentMethod method = MomentMethod::kAnalytic;
  int mc_draws = 10000;
  int analytic_cap = 8;        // Phi_{h-2} call count grows ~h^2 past this
  double cdf_tol = 1e-10;      // inner CDF accuracy for the analytic path
  double cdf_rel_tol = 1e-9;
};

namespace detail {

// First and second moments of Y ~ N(0, sigma) truncated to Y >= a, via the
// classical orthant-moment reduction: each first-moment term needs one
// (h-1)-variate CDF, each second-moment term one (h-2)-variate CDF.
inline TmvnMoments lower_trunc_moments_centered(const Eigen::MatrixXd& sigma,
                                                const Eigen::VectorXd& a,
                                                const MvnCdfOptions& cdf_opt) {
  const int h = static_cast<int>(a.size());

  // alpha = P(Y >= a) = P(-Y <= -a), -Y ~ N(0, sigma).
  Eigen::VectorXd neg_a(h);
  for (int i = 0; i < h; ++i) neg_a[i] = (a[i] == -kInf) ? kInf : -a[i];
  PdMatrix sig_pd = chol_psd(sigma, 1e-8, "truncation covariance");
  const double alpha = mvn_cdf(neg_a, sig_pd, cdf_opt).value;
  if (alpha <= 1e-300) throw NumericError("tmvn_moments: truncation region has vanishing probability");

  // F_k = phi_1(a_k; sigma_kk) * P(Y_{-k} >= a_{-k} | Y_k = a_k).
  Eigen::VectorXd f = Eigen::VectorXd::Zero(h);
  for (int k = 0; k < h; ++k) {
    if (a[k] == -kInf) continue;
    const double skk = sigma(k, k);
    const double dens = normal_pdf(a[k] / std::sqrt(skk)) / std::sqrt(skk);
    if (h == 1) {
      f[k] = dens;
      continue;
    }
    Eigen::VectorXd u(h - 1);
    Eigen::MatrixXd cc(h - 1, h - 1);
    int r = 0;
    for (int i = 0; i < h; ++i) {
      if (i == k) continue;
      const double cmean = sigma(i, k) * a[k] / skk;
      u[r] = (a[i] == -kInf) ? kInf : cmean - a[i];
      int c = 0;
      for (int j = 0; j < h; ++j) {
        if (j == k) continue;
        cc(r, c) = sigma(i, j) - sigma(i, k) * sigma(j, k) / skk;
        ++c;
      }
      ++r;
    }
    PdMatrix cc_pd = chol_psd(cc, 1e-6, "conditional covariance");
    f[k] = dens * mvn_cdf(u, cc_pd, cdf_opt).value;
  }

  // F_kq = phi_2((a_k, a_q)) * P(Y_rest >= a_rest | Y_k = a_k, Y_q = a_q).
  Eigen::MatrixXd fpair = Eigen::MatrixXd::Zero(h, h);
  for (int k = 0; k < h; ++k) {
    for (int q = k + 1; q < h; ++q) {
      if (a[k] == -kInf || a[q] == -kInf) continue;
      const double sk = std::sqrt(sigma(k, k)), sq = std::sqrt(sigma(q, q));
      const double rho = std::clamp(sigma(k, q) / (sk * sq), -1.0, 1.0);
      const double dens2 = bvn_pdf(a[k] / sk, a[q] / sq, rho) / (sk * sq);
      double tail = 1.0;
      if (h > 2) {
        Eigen::Matrix2d b;
        b << sigma(k, k), sigma(k, q), sigma(k, q), sigma(q, q);
        const Eigen::Vector2d akq(a[k], a[q]);
        const Eigen::Matrix2d binv = b.inverse();
        Eigen::VectorXd u(h - 2);
        Eigen::MatrixXd cc(h - 2, h - 2);
        int r = 0;
        for (int i = 0; i < h; ++i) {
          if (i == k || i == q) continue;
          const Eigen::Vector2d sik(sigma(i, k), sigma(i, q));
          const double cmean = sik.dot(binv * akq);
          u[r] = (a[i] == -kInf) ? kInf : cmean - a[i];
          int c = 0;
          for (int j = 0; j < h; ++j) {
            if (j == k || j == q) continue;
            const Eigen::Vector2d sjk(sigma(j, k), sigma(j, q));
            cc(r, c) = sigma(i, j) - sik.dot(binv * sjk);
            ++c;
          }
          ++r;
        }
        PdMatrix cc_pd = chol_psd(cc, 1e-6, "conditional covariance");
        tail = mvn_cdf(u, cc_pd, cdf_opt).value;
      }
      fpair(k, q) = fpair(q, k) = dens2 * tail;
    }
  }

  Eigen::VectorXd ey = sigma * f / alpha;

  Eigen::MatrixXd eyy = sigma;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < h; ++j) {
      double acc = 0.0;
      for (int k = 0; k < h; ++k) {
        if (f[k] == 0.0 && fpair.row(k).isZero(0)) continue;
        double term = 0.0;
        if (a[k] != -kInf) term += sigma(j, k) / sigma(k, k) * a[k] * f[k];
        for (int q = 0; q < h; ++q) {
          if (q == k) continue;
          term += (sigma(j, q) - sigma(k, q) * sigma(j, k) / sigma(k, k)) * fpair(k, q);
        }
        acc += sigma(i, k) * term;
      }
      eyy(i, j) += acc / alpha;
    }
  }

  TmvnMoments out;
  out.mean = ey;
  out.cov = eyy - ey * ey.transpose();
  out.cov = 0.5 * (out.cov + out.cov.transpose()).eval();
  return out;
}

}  // namespace detail

// Mean and covariance of the truncated normal. The analytic path implements
// the orthant-moment recursions and is capped at analytic_cap dimensions;
// the mc path estimates both from tmvn_sample draws.
inline TmvnMoments tmvn_moments(const TruncatedMvn& t, const TmvnMomentOptions& opt = {},
                                RngStream* rng = nullptr) {
  const int h = t.dim();
  if (t.lower.size() != h || t.cov.dim() != h) throw ArgumentError("tmvn_moments: dimension mismatch");

  if (opt.method == MomentMethod::kAnalytic) {
    if (h > opt.analytic_cap)
      throw CapacityError("tmvn_moments: dimension " + std::to_string(h) +
                          " above analytic cap " + std::to_string(opt.analytic_cap) +
                          "; use the mc method");
    MvnCdfOptions cdf_opt;
    cdf_opt.tol = std::max(opt.cdf_tol, 1e-10);
    cdf_opt.rel_tol = opt.cdf_rel_tol;
    Eigen::VectorXd a = t.lower - t.mean;
    for (int i = 0; i < h; ++i)
      if (t.lower[i] == -kInf) a[i] = -kInf;
    TmvnMoments m = detail::lower_trunc_moments_centered(t.cov.values, a, cdf_opt);
    m.mean += t.mean;
    return m;
  }

  RngStream fallback(0x7456e5ULL);
  RngStream& stream = rng ? *rng : fallback;
  const auto sample = tmvn_sample(t, opt.mc_draws, stream);
  TmvnMoments m;
  m.mean = sample.draws.colwise().mean();
  Eigen::MatrixXd centered = sample.draws.rowwise() - m.mean.transpose();
  m.cov = centered.transpose() * centered / (sample.draws.rows() - 1.0);
  m.cov = 0.5 * (m.cov + m.cov.transpose()).eval();
  return m;
}

}  // namespace mnp
