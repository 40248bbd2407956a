#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "mnp/errors.hpp"
#include "mnp/linalg.hpp"
#include "mnp/normal.hpp"
#include "mnp/rng.hpp"

namespace mnp {

struct CdfResult {
  double value = 0.0;
  double error = 0.0;   // estimated absolute error
  long points = 0;      // integrand evaluations spent
};

struct MvnCdfOptions {
  double tol = 1e-8;     // absolute error target (must be >= 1e-10)
  double rel_tol = 0.0;  // additional relative target, 0 disables
  long max_points_per_shift = 1L << 17;
  int dim_cap = 1000;
};

namespace detail {

inline std::vector<int> first_primes(int count) {
  std::vector<int> primes;
  primes.reserve(count);
  for (int cand = 2; static_cast<int>(primes.size()) < count; ++cand) {
    bool ok = true;
    for (int p : primes) {
      if (p * p > cand) break;
      if (cand % p == 0) { ok = false; break; }
    }
    if (ok) primes.push_back(cand);
  }
  return primes;
}

// Truncated-below-b expectation E[Z | Z <= b] for standard normal; used by
// the variable-reordering heuristic.
inline double lower_trunc_mean(double b) {
  const double p = normal_cdf(b);
  if (p < 1e-300) return b - 1.0 / std::min(b, -1.0);
  if (p >= 1.0) return 0.0;
  return -normal_pdf(b) / p;
}

// Separation-of-variables setup for P(X <= b), X ~ N(0, R) with R a
// correlation matrix. Reorders variables greedily (smallest conditional
// probability first, as in Genz-Bretz) and builds the Cholesky factor of the
// permuted R. Returns false when a pivot collapses to a ray of probability
// zero (the caller returns 0).
inline bool sov_prepare(Eigen::MatrixXd r, Eigen::VectorXd b, Eigen::MatrixXd& c_out,
                        Eigen::VectorXd& b_out) {
  const int h = static_cast<int>(b.size());
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(h, h);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(h);

  for (int i = 0; i < h; ++i) {
    int best = -1;
    double best_p = 2.0, best_bt = 0.0;
    for (int j = i; j < h; ++j) {
      double s2 = r(j, j);
      double num = b[j];
      for (int k = 0; k < i; ++k) {
        s2 -= c(j, k) * c(j, k);
        num -= c(j, k) * y[k];
      }
      s2 = std::max(s2, 0.0);
      const double s = std::sqrt(s2);
      double bt;
      if (s > 1e-12) {
        bt = num / s;
      } else {
        bt = (num >= 0.0) ? kInf : -kInf;
      }
      const double p = normal_cdf(bt);
      if (p < best_p) {
        best_p = p;
        best = j;
        best_bt = bt;
      }
    }
    if (best != i) {
      r.row(i).swap(r.row(best));
      r.col(i).swap(r.col(best));
      std::swap(b[i], b[best]);
      for (int k = 0; k < i; ++k) std::swap(c(i, k), c(best, k));
    }
    double cii2 = r(i, i);
    for (int k = 0; k < i; ++k) cii2 -= c(i, k) * c(i, k);
    if (cii2 > 1e-12) {
      const double cii = std::sqrt(cii2);
      c(i, i) = cii;
      for (int j = i + 1; j < h; ++j) {
        double v = r(j, i);
        for (int k = 0; k < i; ++k) v -= c(j, k) * c(i, k);
        c(j, i) = v / cii;
      }
    } else {
      // Degenerate direction: the constraint is deterministic given its
      // predecessors. Probability-zero rays end the computation.
      c(i, i) = 0.0;
      if (best_bt == -kInf) return false;
    }
    y[i] = lower_trunc_mean(best_bt);
  }
  c_out = std::move(c);
  b_out = std::move(b);
  return true;
}

// One separation-of-variables integrand evaluation at point w in [0,1)^(h-1).
inline double sov_integrand(const Eigen::MatrixXd& c, const Eigen::VectorXd& b,
                            const double* w, std::vector<double>& y) {
  const int h = static_cast<int>(b.size());
  double e = (c(0, 0) > 0.0) ? normal_cdf(b[0] / c(0, 0)) : (b[0] >= 0.0 ? 1.0 : 0.0);
  double f = e;
  for (int i = 1; i < h; ++i) {
    const double u = std::clamp(w[i - 1] * e, 1e-300, 1.0 - 1e-16);
    y[i - 1] = normal_quantile(u);
    double num = b[i];
    for (int k = 0; k < i; ++k) num -= c(i, k) * y[k];
    e = (c(i, i) > 0.0) ? normal_cdf(num / c(i, i)) : (num >= 0.0 ? 1.0 : 0.0);
    f *= e;
    if (f <= 0.0) return 0.0;
  }
  return f;
}

}  // namespace detail

// P(X <= u) for X ~ N(0, W), with the estimated absolute error.
//
// Dimensions 1 and 2 use closed forms (erfc / Genz bivariate). Above that,
// randomized quasi Monte Carlo on the separation-of-variables transform:
// Richtmyer lattice points under 12 random shifts drawn from a fixed internal
// seed, so repeated calls give identical results. Components of u may be
// +inf (marginalized out); any -inf component gives probability zero.
inline CdfResult mvn_cdf(const Eigen::VectorXd& u, const PdMatrix& w,
                         const MvnCdfOptions& opt = {}) {
  if (u.size() != w.dim()) throw ArgumentError("mvn_cdf: dimension mismatch");
  if (opt.tol < 1e-10) throw ArgumentError("mvn_cdf: tol below 1e-10");
  if (w.dim() > opt.dim_cap)
    throw CapacityError("mvn_cdf: dimension " + std::to_string(w.dim()) +
                        " exceeds cap " + std::to_string(opt.dim_cap));

  // Strip marginalized (+inf) coordinates; -inf forces zero.
  std::vector<int> keep;
  keep.reserve(u.size());
  for (int i = 0; i < u.size(); ++i) {
    if (u[i] == -kInf) return {0.0, 0.0, 0};
    if (std::isnan(u[i])) throw ArgumentError("mvn_cdf: NaN bound");
    if (u[i] != kInf) keep.push_back(i);
  }
  const int h = static_cast<int>(keep.size());
  if (h == 0) return {1.0, 0.0, 0};

  Eigen::VectorXd b(h);
  Eigen::MatrixXd sub(h, h);
  for (int i = 0; i < h; ++i) {
    b[i] = u[keep[i]];
    for (int j = 0; j < h; ++j) sub(i, j) = w.values(keep[i], keep[j]);
  }

  for (int i = 0; i < h; ++i) {
    if (!(sub(i, i) > 0.0)) throw NumericError("mvn_cdf: zero variance coordinate");
  }

  if (h == 1) {
    return {normal_cdf(b[0] / std::sqrt(sub(0, 0))), 1e-15, 1};
  }
  if (h == 2) {
    const double s1 = std::sqrt(sub(0, 0)), s2 = std::sqrt(sub(1, 1));
    double rho = sub(0, 1) / (s1 * s2);
    rho = std::clamp(rho, -1.0, 1.0);
    return {bvn_cdf(b[0] / s1, b[1] / s2, rho), 5e-15, 1};
  }

  // Standardize to a correlation matrix before factoring.
  Eigen::VectorXd d = sub.diagonal().array().sqrt();
  Eigen::MatrixXd r = (d.cwiseInverse().asDiagonal() * sub * d.cwiseInverse().asDiagonal());
  r = 0.5 * (r + r.transpose());
  r.diagonal().setOnes();
  Eigen::VectorXd bs = b.cwiseQuotient(d);

  Eigen::MatrixXd c;
  Eigen::VectorXd bp;
  if (!detail::sov_prepare(r, bs, c, bp)) return {0.0, 0.0, 0};

  const int m = h - 1;  // effective QMC dimension
  const auto primes = detail::first_primes(m);
  std::vector<double> lattice(m);
  for (int j = 0; j < m; ++j) {
    const double s = std::sqrt(static_cast<double>(primes[j]));
    lattice[j] = s - std::floor(s);
  }

  constexpr int kShifts = 12;
  std::mt19937_64 shift_gen(0x6d6e70637166ULL);  // fixed internal seed
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<double> shifts(kShifts * m);
  for (double& s : shifts) s = unif(shift_gen);

  std::vector<double> acc(m, 0.0);  // running frac(k * lattice)
  std::vector<double> sums(kShifts, 0.0);
  std::vector<double> wpt(m), ybuf(m);
  long count = 0;
  long next_target = 256;
  CdfResult res;
  while (true) {
    for (; count < next_target; ++count) {
      for (int j = 0; j < m; ++j) {
        acc[j] += lattice[j];
        if (acc[j] >= 1.0) acc[j] -= 1.0;
      }
      for (int s = 0; s < kShifts; ++s) {
        for (int j = 0; j < m; ++j) {
          double t = acc[j] + shifts[s * m + j];
          if (t >= 1.0) t -= 1.0;
          wpt[j] = std::fabs(2.0 * t - 1.0);  // baker transform
        }
        sums[s] += detail::sov_integrand(c, bp, wpt.data(), ybuf);
      }
    }
    double mean = 0.0;
    for (double s : sums) mean += s;
    mean /= (kShifts * static_cast<double>(count));
    double var = 0.0;
    for (double s : sums) {
      const double d2 = s / static_cast<double>(count) - mean;
      var += d2 * d2;
    }
    var /= (kShifts - 1);
    res.value = std::clamp(mean, 0.0, 1.0);
    res.error = 3.5 * std::sqrt(var / kShifts);
    res.points = count * kShifts;
    const double target = std::max(opt.tol, opt.rel_tol * std::fabs(res.value));
    if (res.error <= target || count >= opt.max_points_per_shift) break;
    next_target = count * 2;
  }
  return res;
}

inline CdfResult mvn_cdf(const Eigen::VectorXd& u, const PdMatrix& w, double tol) {
  MvnCdfOptions opt;
  opt.tol = tol;
  return mvn_cdf(u, w, opt);
}

// log P(X <= u); -inf when the estimate underflows to zero.
inline double mvn_log_cdf(const Eigen::VectorXd& u, const PdMatrix& w,
                          const MvnCdfOptions& opt = {}) {
  if (u.size() == 1) return normal_logcdf(u[0] / std::sqrt(w.values(0, 0)));
  const CdfResult r = mvn_cdf(u, w, opt);
  if (r.value <= 0.0) return -kInf;
  return std::log(r.value);
}

// count x h matrix of draws from N(mean, cov), one row per draw.
inline Eigen::MatrixXd mvn_sample(const Eigen::VectorXd& mean, const PdMatrix& cov, int count,
                                  RngStream& rng) {
  if (mean.size() != cov.dim()) throw ArgumentError("mvn_sample: dimension mismatch");
  if (count < 1) throw ArgumentError("mvn_sample: count must be positive");
  const int h = cov.dim();
  Eigen::MatrixXd out(count, h);
  Eigen::VectorXd g(h);
  for (int i = 0; i < count; ++i) {
    for (int j = 0; j < h; ++j) g[j] = rng.gaussian();
    out.row(i) = (mean + cov.factor.triangularView<Eigen::Lower>() * g).transpose();
  }
  return out;
}

}  // namespace mnp
