#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <string>
#include <vector>

#include "mnp/errors.hpp"

namespace mnp {

// Per-coordinate posterior summary plus full sample covariance. `method`
// records provenance: draws from the exact sampler vs the blocked
// variational approximation.
struct PosteriorSummary {
  std::string method;
  long n_draws = 0;
  std::vector<double> quantile_levels;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  Eigen::MatrixXd quantiles;  // coord x level
  Eigen::MatrixXd cov;
};

// Type-7 (linear interpolation) sample quantile of a sorted vector.
inline double sorted_quantile(const std::vector<double>& sorted, double level) {
  const std::size_t n = sorted.size();
  if (n == 1) return sorted[0];
  const double h = level * static_cast<double>(n - 1);
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= n) return sorted[n - 1];
  const double frac = h - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

inline PosteriorSummary summarize(const Eigen::MatrixXd& draws,
                                  const std::vector<double>& levels,
                                  const std::string& method) {
  if (draws.rows() < 2) throw ArgumentError("summarize: need at least two draws");
  for (double l : levels)
    if (!(l > 0.0 && l < 1.0)) throw ArgumentError("summarize: quantile level outside (0,1)");

  PosteriorSummary s;
  s.method = method;
  s.n_draws = draws.rows();
  s.quantile_levels = levels;
  s.mean = draws.colwise().mean();
  Eigen::MatrixXd centered = draws.rowwise() - s.mean.transpose();
  s.cov = centered.transpose() * centered / (draws.rows() - 1.0);
  s.cov = 0.5 * (s.cov + s.cov.transpose()).eval();
  s.sd = s.cov.diagonal().array().max(0.0).sqrt();
  s.quantiles.resize(draws.cols(), static_cast<long>(levels.size()));
  std::vector<double> col(draws.rows());
  for (int j = 0; j < draws.cols(); ++j) {
    for (long i = 0; i < draws.rows(); ++i) col[i] = draws(i, j);
    std::sort(col.begin(), col.end());
    for (std::size_t k = 0; k < levels.size(); ++k)
      s.quantiles(j, static_cast<long>(k)) = sorted_quantile(col, levels[k]);
  }
  return s;
}

}  // namespace mnp
