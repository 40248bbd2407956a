#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "mnp/tmvn.hpp"

using namespace mnp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kHalfNormalMean = 0.79788456080286535588;  // sqrt(2/pi)
constexpr double kHalfNormalVar = 0.36338022763241865692;   // 1 - 2/pi

MatrixXd corr2(double rho) {
  MatrixXd s(2, 2);
  s << 1.0, rho, rho, 1.0;
  return s;
}

TruncatedMvn std_orthant(int h, double rho = 0.0) {
  MatrixXd s = MatrixXd::Constant(h, h, rho) + (1.0 - rho) * MatrixXd::Identity(h, h);
  return orthant_truncated(VectorXd::Zero(h), chol_psd(s));
}

// Standard errors for sample mean and covariance entries under roughly
// Gaussian draws, deflated by an effective sample size.
double mean_se(const Eigen::MatrixXd& cov, int j, double n_eff) {
  return std::sqrt(cov(j, j) / n_eff);
}

double cov_se(const Eigen::MatrixXd& cov, int j, int k, double n_eff) {
  return std::sqrt((cov(j, j) * cov(k, k) + cov(j, k) * cov(j, k)) / n_eff);
}

}  // namespace

TEST_CASE("half-normal analytic moments to 1e-8") {
  const TruncatedMvn t = std_orthant(1);
  const TmvnMoments m = tmvn_moments(t);
  CHECK(m.mean[0] == Catch::Approx(kHalfNormalMean).margin(1e-10));
  CHECK(m.cov(0, 0) == Catch::Approx(kHalfNormalVar).margin(1e-10));
}

TEST_CASE("independent bivariate orthant factorizes") {
  const TmvnMoments m = tmvn_moments(std_orthant(2));
  CHECK(m.mean[0] == Catch::Approx(kHalfNormalMean).margin(1e-10));
  CHECK(m.mean[1] == Catch::Approx(kHalfNormalMean).margin(1e-10));
  CHECK(m.cov(0, 0) == Catch::Approx(kHalfNormalVar).margin(1e-10));
  CHECK(m.cov(1, 1) == Catch::Approx(kHalfNormalVar).margin(1e-10));
  CHECK(m.cov(0, 1) == Catch::Approx(0.0).margin(1e-10));
}

TEST_CASE("untruncated region reduces to the plain normal") {
  TruncatedMvn t;
  t.mean = VectorXd::LinSpaced(3, -1.0, 1.0);
  t.cov = chol_psd(MatrixXd::Constant(3, 3, 0.3) + 0.7 * MatrixXd::Identity(3, 3));
  t.lower = VectorXd::Constant(3, -kInf);
  const TmvnMoments m = tmvn_moments(t);
  CHECK((m.mean - t.mean).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((m.cov - t.cov.values).cwiseAbs().maxCoeff() < 1e-12);

  RngStream rng(17);
  const auto s = tmvn_sample(t, 50000, rng);
  CHECK(s.diag.method == "rejection");
  CHECK(s.diag.acceptance_observed == 1.0);
  for (int j = 0; j < 3; ++j)
    CHECK(s.draws.col(j).mean() ==
          Catch::Approx(t.mean[j]).margin(4.0 * mean_se(t.cov.values, j, 50000)));
}

TEST_CASE("mixed infinite bounds") {
  TruncatedMvn t = std_orthant(2);
  t.lower[1] = -kInf;
  const TmvnMoments m = tmvn_moments(t);
  CHECK(m.mean[0] == Catch::Approx(kHalfNormalMean).margin(1e-10));
  CHECK(m.mean[1] == Catch::Approx(0.0).margin(1e-10));
  CHECK(m.cov(1, 1) == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("half-normal sampling matches the analytic mean") {
  const TruncatedMvn t = std_orthant(1);
  RngStream rng(3);
  const int n = 40000;
  const auto s = tmvn_sample(t, n, rng);
  CHECK(s.diag.method == "rejection");
  CHECK(s.diag.exact);
  const double se = std::sqrt(kHalfNormalVar / n);
  CHECK(s.draws.col(0).mean() == Catch::Approx(kHalfNormalMean).margin(3.5 * se));
}

TEST_CASE("sample moments agree with analytic moments at rho 0.9") {
  TruncatedMvn t = orthant_truncated(VectorXd::Zero(2), chol_psd(corr2(0.9)));
  const TmvnMoments ref = tmvn_moments(t);
  RngStream rng(44);
  const int n = 60000;
  const auto s = tmvn_sample(t, n, rng);
  const double n_eff = s.diag.exact ? n : s.diag.ess_proxy;
  for (int j = 0; j < 2; ++j)
    CHECK(s.draws.col(j).mean() ==
          Catch::Approx(ref.mean[j]).margin(4.0 * mean_se(ref.cov, j, n_eff)));
  const VectorXd mu = s.draws.colwise().mean();
  const MatrixXd sc =
      (s.draws.rowwise() - mu.transpose()).transpose() * (s.draws.rowwise() - mu.transpose()) /
      (n - 1.0);
  for (int j = 0; j < 2; ++j)
    for (int k = j; k < 2; ++k)
      CHECK(sc(j, k) == Catch::Approx(ref.cov(j, k)).margin(4.0 * cov_se(ref.cov, j, k, n_eff)));
}

TEST_CASE("analytic moments vs large rejection-sampled estimate at rho 0.5") {
  TruncatedMvn t = orthant_truncated(VectorXd::Zero(2), chol_psd(corr2(0.5)));
  const TmvnMoments ana = tmvn_moments(t);
  TmvnMomentOptions mc;
  mc.method = MomentMethod::kMc;
  mc.mc_draws = 1000000;
  RngStream rng(91);
  const TmvnMoments est = tmvn_moments(t, mc, &rng);
  for (int j = 0; j < 2; ++j)
    CHECK(ana.mean[j] == Catch::Approx(est.mean[j]).margin(3.0 * mean_se(ana.cov, j, 1e6)));
  for (int j = 0; j < 2; ++j)
    for (int k = j; k < 2; ++k)
      CHECK(ana.cov(j, k) == Catch::Approx(est.cov(j, k)).margin(3.0 * cov_se(ana.cov, j, k, 1e6)));
}

TEST_CASE("gibbs and rejection agree on the same target") {
  TruncatedMvn t = orthant_truncated(VectorXd::Constant(2, 0.3), chol_psd(corr2(0.6)));
  RngStream r1(7), r2(8);
  const int n = 60000;
  TmvnSampleOptions rej;
  rej.method = TruncMethod::kRejection;
  TmvnSampleOptions gib;
  gib.method = TruncMethod::kGibbs;
  const auto a = tmvn_sample(t, n, r1, rej);
  const auto b = tmvn_sample(t, n, r2, gib);
  CHECK(a.diag.exact);
  CHECK_FALSE(b.diag.exact);
  CHECK(b.diag.ess_proxy > 1000.0);
  const TmvnMoments ref = tmvn_moments(t);
  for (int j = 0; j < 2; ++j) {
    const double band = 4.0 * (mean_se(ref.cov, j, n) + mean_se(ref.cov, j, b.diag.ess_proxy));
    CHECK(a.draws.col(j).mean() == Catch::Approx(b.draws.col(j).mean()).margin(band));
  }
}

TEST_CASE("auto picks gibbs when rejection is hopeless, rejection errors") {
  TruncatedMvn t = orthant_truncated(VectorXd::Constant(2, -8.0), chol_psd(corr2(0.2)));
  RngStream rng(10);
  const auto s = tmvn_sample(t, 500, rng);  // acceptance ~ 1e-15
  CHECK(s.diag.method == "gibbs");
  for (int i = 0; i < s.draws.rows(); ++i)
    for (int j = 0; j < 2; ++j) CHECK(s.draws(i, j) >= 0.0);

  TmvnSampleOptions rej;
  rej.method = TruncMethod::kRejection;
  RngStream rng2(11);
  CHECK_THROWS_AS(tmvn_sample(t, 10, rng2, rej), NumericError);
}

TEST_CASE("vanishing region probability is rejected outright") {
  TruncatedMvn t = orthant_truncated(VectorXd::Constant(2, -40.0), chol_psd(corr2(0.0)));
  RngStream rng(12);
  CHECK_THROWS_AS(tmvn_sample(t, 10, rng), NumericError);
}

TEST_CASE("analytic cap instructs the mc fallback") {
  const TruncatedMvn t = std_orthant(9);
  try {
    tmvn_moments(t);
    FAIL("expected CapacityError");
  } catch (const CapacityError& e) {
    CHECK(std::string(e.what()).find("mc") != std::string::npos);
  }
}

TEST_CASE("gibbs draws are reproducible for a fixed stream") {
  TruncatedMvn t = orthant_truncated(VectorXd::Constant(3, -4.0),
                                     chol_psd(MatrixXd::Constant(3, 3, 0.5) +
                                              0.5 * MatrixXd::Identity(3, 3)));
  TmvnSampleOptions gib;
  gib.method = TruncMethod::kGibbs;
  RngStream r1(21), r2(21);
  const auto a = tmvn_sample(t, 200, r1, gib);
  const auto b = tmvn_sample(t, 200, r2, gib);
  CHECK((a.draws - b.draws).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("randomized analytic vs mc agreement, h up to 4") {
  std::mt19937_64 gen(4242);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> ub(-1.0, 0.2), um(-0.5, 0.5);
  int checked = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const int h = 1 + static_cast<int>(gen() % 4);
    MatrixXd a(h, h);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < h; ++j) a(i, j) = nd(gen);
    MatrixXd s = a * a.transpose() + h * MatrixXd::Identity(h, h);
    const VectorXd d = s.diagonal().array().sqrt();
    s = (d.cwiseInverse().asDiagonal() * s * d.cwiseInverse().asDiagonal()).eval();

    TruncatedMvn t;
    t.cov = chol_psd(s);
    t.mean = VectorXd::NullaryExpr(h, [&](Eigen::Index) { return um(gen); });
    t.lower = VectorXd::NullaryExpr(h, [&](Eigen::Index) { return ub(gen); });

    const TmvnMoments ana = tmvn_moments(t);
    // Symmetric, PD after a tiny jitter.
    CHECK((ana.cov - ana.cov.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK_NOTHROW(chol_psd(ana.cov, 1e-8));

    TmvnMomentOptions mc;
    mc.method = MomentMethod::kMc;
    mc.mc_draws = 1000000;
    RngStream rng(5000 + trial);
    const TmvnMoments est = tmvn_moments(t, mc, &rng);
    const double n_eff = 1e6;
    for (int j = 0; j < h; ++j) {
      CHECK(ana.mean[j] == Catch::Approx(est.mean[j]).margin(4.0 * mean_se(ana.cov, j, n_eff)));
      for (int k = j; k < h; ++k)
        CHECK(ana.cov(j, k) ==
              Catch::Approx(est.cov(j, k)).margin(4.0 * cov_se(ana.cov, j, k, n_eff)));
    }
    ++checked;
  }
  CHECK(checked == 20);
}
