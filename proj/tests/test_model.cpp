#include <catch2/catch_amalgamated.hpp>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <random>

#include "mnp/model.hpp"

using namespace mnp;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd random_pd_sigma(int L, std::mt19937_64& gen, double ridge = 0.4) {
  std::normal_distribution<double> nd;
  MatrixXd a(L, L);
  for (int i = 0; i < L; ++i)
    for (int j = 0; j < L; ++j) a(i, j) = nd(gen);
  return a * a.transpose() + ridge * MatrixXd::Identity(L, L);
}

MnpModel tiny_model(int n, int p, int L, const MatrixXd& sigma, double nu2,
                    std::uint64_t seed) {
  const VectorXd beta = beta_from_prior(p, L, nu2, seed);
  auto [data, truth] = simulate_dataset(beta, n, p, L, sigma, seed);
  return MnpModel{std::move(data), sigma, nu2};
}

// Frequency of y under beta by brute-force utility simulation.
double utility_freq(const VectorXd& beta, const VectorXd& x, int y, int L,
                    const MatrixXd& sigma, int draws, RngStream& rng) {
  const int p = static_cast<int>(x.size());
  MatrixXd coef = MatrixXd::Zero(L, p);
  for (int ell = 0; ell < L - 1; ++ell) coef.row(ell) = beta.segment(ell * p, p).transpose();
  const PdMatrix sig = chol_psd(sigma);
  const VectorXd base = coef * x;
  VectorXd g(L), z(L);
  long hits = 0;
  for (int d = 0; d < draws; ++d) {
    for (int j = 0; j < L; ++j) g[j] = rng.gaussian();
    z = base + sig.factor.triangularView<Eigen::Lower>() * g;
    int best = 0;
    for (int j = 1; j < L; ++j)
      if (z[j] > z[best]) best = j;
    if (best + 1 == y) ++hits;
  }
  return static_cast<double>(hits) / draws;
}

}  // namespace

TEST_CASE("contrast matrices match the defining examples") {
  const ContrastMatrix c1 = build_contrast(1, 3);
  MatrixXd full(2, 3), reduced(2, 2);
  full << -1, 1, 0, -1, 0, 1;
  reduced << -1, 1, -1, 0;
  CHECK((c1.full - full).cwiseAbs().maxCoeff() == 0.0);
  CHECK((c1.reduced - reduced).cwiseAbs().maxCoeff() == 0.0);

  const ContrastMatrix c3 = build_contrast(3, 3);
  CHECK((c3.reduced - MatrixXd::Identity(2, 2)).cwiseAbs().maxCoeff() == 0.0);

  const ContrastMatrix cb = build_contrast(2, 2);
  CHECK(cb.full(0, 0) == 1.0);
  CHECK(cb.full(0, 1) == -1.0);
  CHECK(cb.reduced(0, 0) == 1.0);

  CHECK_THROWS_AS(build_contrast(0, 3), ArgumentError);
  CHECK_THROWS_AS(build_contrast(4, 3), ArgumentError);
  CHECK_THROWS_AS(build_contrast(1, 1), ArgumentError);
}

TEST_CASE("contrast rows sum to zero and each row is a signed pair") {
  for (int L = 2; L <= 5; ++L) {
    for (int ell = 1; ell <= L; ++ell) {
      const ContrastMatrix c = build_contrast(ell, L);
      for (int r = 0; r < L - 1; ++r) {
        CHECK(c.full.row(r).sum() == 0.0);
        int plus = 0, minus = 0, zero = 0;
        for (int j = 0; j < L; ++j) {
          if (c.full(r, j) == 1.0) ++plus;
          else if (c.full(r, j) == -1.0) ++minus;
          else if (c.full(r, j) == 0.0) ++zero;
        }
        CHECK(plus == 1);
        CHECK(minus == 1);
        CHECK(zero == L - 2);
        CHECK(c.full(r, ell - 1) == -1.0);
      }
    }
  }
}

TEST_CASE("observation design: binary reduction, zero covariates, hand case") {
  VectorXd x1(1);
  x1 << 3.5;
  const MatrixXd d = build_observation_design(x1, 2, 2);
  CHECK(d.rows() == 1);
  CHECK(d.cols() == 1);
  CHECK(d(0, 0) == -3.5);

  VectorXd x0 = VectorXd::Zero(3);
  CHECK(build_observation_design(x0, 1, 3).cwiseAbs().maxCoeff() == 0.0);

  VectorXd x2(2);
  x2 << 1.0, 2.0;
  MatrixXd expect(2, 4);
  expect << -1, -2, 0, 0, 0, 0, -1, -2;
  CHECK((build_observation_design(x2, 3, 3) - expect).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("observation design selects coefficient columns on basis covariates") {
  std::mt19937_64 gen(7);
  std::normal_distribution<double> nd;
  for (int L = 2; L <= 5; ++L) {
    for (int p = 1; p <= 4; ++p) {
      for (int k = 0; k < p; ++k) {
        VectorXd ek = VectorXd::Zero(p);
        ek[k] = 1.0;
        for (int y = 1; y <= L; ++y) {
          const MatrixXd d = build_observation_design(ek, y, L);
          VectorXd beta(p * (L - 1));
          for (int i = 0; i < beta.size(); ++i) beta[i] = nd(gen);
          const ContrastMatrix c = build_contrast(y, L);
          VectorXd gathered(L - 1);
          for (int j = 0; j < L - 1; ++j) gathered[j] = beta[j * p + k];
          const VectorXd direct = -c.reduced * gathered;
          CHECK((d * beta - direct).cwiseAbs().maxCoeff() < 1e-14);
        }
      }
    }
  }
}

TEST_CASE("design expansion hand cases") {
  // n=1, L=2, sigma=I2, x=1: xbar = [-1], lambda = [2].
  Dataset data;
  data.n = 1;
  data.p = 1;
  data.L = 2;
  data.y = {2};
  data.X = MatrixXd::Constant(1, 1, 1.0);
  MnpModel model{data, MatrixXd::Identity(2, 2), 1.0};
  const DesignExpansion ex = build_design_expansion(model);
  CHECK(ex.xbar(0, 0) == -1.0);
  CHECK(ex.lambda[0].values(0, 0) == 2.0);

  // Identity noise: every block is 2 on the diagonal, 1 off it.
  Dataset d3;
  d3.n = 2;
  d3.p = 1;
  d3.L = 3;
  d3.y = {1, 3};
  d3.X = MatrixXd::Constant(2, 1, 0.5);
  MnpModel m3{d3, MatrixXd::Identity(3, 3), 1.0};
  const DesignExpansion ex3 = build_design_expansion(m3);
  MatrixXd expect(2, 2);
  expect << 2, 1, 1, 2;
  for (int i = 0; i < 2; ++i)
    CHECK((ex3.lambda[i].values - expect).cwiseAbs().maxCoeff() == 0.0);

  // Identical observations give identical blocks.
  Dataset dd;
  dd.n = 2;
  dd.p = 2;
  dd.L = 3;
  dd.y = {2, 2};
  dd.X = MatrixXd::Ones(2, 2);
  std::mt19937_64 gen(13);
  MnpModel md{dd, random_pd_sigma(3, gen), 1.0};
  const DesignExpansion exd = build_design_expansion(md);
  CHECK((exd.lambda[0].values - exd.lambda[1].values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((exd.xbar_block(0) - exd.xbar_block(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lambda blocks factor cleanly for randomized PD noise covariances") {
  std::mt19937_64 gen(101);
  for (int trial = 0; trial < 100; ++trial) {
    const int L = 2 + static_cast<int>(gen() % 3);
    const MnpModel model = tiny_model(3, 2, L, random_pd_sigma(L, gen), 1.0, 900 + trial);
    const DesignExpansion ex = build_design_expansion(model);
    for (const auto& block : ex.lambda) CHECK(block.jitter_applied == 0.0);
  }
}

TEST_CASE("likelihood at beta zero is the symmetric 1/L^n") {
  for (int L : {2, 3, 4}) {
    const MnpModel model = tiny_model(4, 2, L, MatrixXd::Identity(L, L), 1.0, 42 + L);
    const DesignExpansion ex = build_design_expansion(model);
    const VectorXd beta0 = VectorXd::Zero(model.coef_dim());
    CHECK(log_likelihood(beta0, ex) == Catch::Approx(4.0 * std::log(1.0 / L)).margin(5e-5));
  }
}

TEST_CASE("binary likelihood factor reduces to Phi(-beta/sqrt(2))") {
  Dataset data;
  data.n = 1;
  data.p = 1;
  data.L = 2;
  data.y = {2};
  data.X = MatrixXd::Constant(1, 1, 1.0);
  MnpModel model{data, MatrixXd::Identity(2, 2), 1.0};
  const DesignExpansion ex = build_design_expansion(model);
  for (double b : {-1.5, -0.2, 0.0, 0.7, 2.0}) {
    VectorXd beta(1);
    beta << b;
    CHECK(likelihood(beta, ex) == Catch::Approx(normal_cdf(-b / std::sqrt(2.0))).margin(1e-12));
  }
}

TEST_CASE("single observation likelihood equals the CDF factor directly") {
  std::mt19937_64 gen(77);
  const MatrixXd sigma = random_pd_sigma(3, gen);
  const MnpModel model = tiny_model(1, 2, 3, sigma, 1.0, 4);
  const DesignExpansion ex = build_design_expansion(model);
  VectorXd beta(4);
  beta << 0.3, -0.8, 0.5, 0.1;
  const auto direct = mvn_cdf(ex.xbar_block(0) * beta, ex.lambda[0], 1e-10);
  CHECK(likelihood(beta, ex) == Catch::Approx(direct.value).margin(1e-9));
}

TEST_CASE("likelihood factors match utility-simulation frequencies") {
  std::mt19937_64 gen(31);
  const int L = 3, p = 2, n = 3;
  const MatrixXd sigma = random_pd_sigma(L, gen);
  const MnpModel model = tiny_model(n, p, L, sigma, 1.0, 57);
  const DesignExpansion ex = build_design_expansion(model);
  VectorXd beta(p * (L - 1));
  beta << 0.4, -0.3, 0.2, 0.6;

  const int draws = 200000;
  RngStream rng(99);
  for (int i = 0; i < n; ++i) {
    const double factor = mvn_cdf(ex.xbar_block(i) * beta, ex.lambda[i], 1e-9).value;
    RngStream obs_rng = rng.split(i);
    const double freq = utility_freq(beta, model.data.X.row(i), model.data.y[i], L, sigma,
                                     draws, obs_rng);
    const double se = std::sqrt(std::max(factor * (1.0 - factor), 1e-12) / draws);
    CHECK(factor == Catch::Approx(freq).margin(3.5 * se));
  }
}

TEST_CASE("choice probabilities: symmetry, binary formula, argmax oracle") {
  // Symmetric case: all classes equally likely.
  Dataset d4;
  d4.n = 1;
  d4.p = 1;
  d4.L = 4;
  d4.y = {1};
  d4.X = MatrixXd::Constant(1, 1, 0.3);
  MnpModel m4{d4, MatrixXd::Identity(4, 4), 1.0};
  VectorXd x(1);
  x << 0.3;
  const VectorXd probs = choice_probabilities(VectorXd::Zero(3), x, m4, 1e-8);
  for (int ell = 0; ell < 4; ++ell) CHECK(probs[ell] == Catch::Approx(0.25).margin(1e-6));

  // Binary closed form with a non-identity noise covariance.
  Dataset d2;
  d2.n = 1;
  d2.p = 1;
  d2.L = 2;
  d2.y = {1};
  d2.X = MatrixXd::Constant(1, 1, 1.0);
  MatrixXd s2(2, 2);
  s2 << 1.5, 0.4, 0.4, 0.8;
  MnpModel m2{d2, s2, 1.0};
  VectorXd xb(1), beta1(1);
  xb << 2.0;
  beta1 << 0.9;
  const double lam = s2(0, 0) - 2.0 * s2(0, 1) + s2(1, 1);
  const VectorXd p2 = choice_probabilities(beta1, xb, m2, 1e-8);
  CHECK(p2[0] == Catch::Approx(normal_cdf(xb[0] * beta1[0] / std::sqrt(lam))).margin(1e-10));
  CHECK(p2[0] + p2[1] == Catch::Approx(1.0).margin(1e-10));

  // Monte Carlo argmax oracle on a three-class instance.
  std::mt19937_64 gen(2);
  const MatrixXd sigma = random_pd_sigma(3, gen);
  MnpModel m3 = tiny_model(1, 2, 3, sigma, 1.0, 11);
  VectorXd beta(4), x3(2);
  beta << 0.8, -0.4, -0.2, 0.5;
  x3 << 0.6, -1.1;
  const VectorXd pr = choice_probabilities(beta, x3, m3, 1e-9);
  const int draws = 300000;
  double total = 0.0;
  for (int ell = 1; ell <= 3; ++ell) {
    RngStream rng(400 + ell);
    const double freq = utility_freq(beta, x3, ell, 3, sigma, draws, rng);
    const double se = std::sqrt(std::max(pr[ell - 1] * (1.0 - pr[ell - 1]), 1e-12) / draws);
    CHECK(pr[ell - 1] == Catch::Approx(freq).margin(3.5 * se));
    total += pr[ell - 1];
  }
  CHECK(total == Catch::Approx(1.0).margin(1e-6));
}

TEST_CASE("choice probabilities sum to one across randomized instances") {
  std::mt19937_64 gen(606);
  std::normal_distribution<double> nd;
  for (int trial = 0; trial < 100; ++trial) {
    const int L = 2 + static_cast<int>(gen() % 3);
    const int p = 1 + static_cast<int>(gen() % 2);
    Dataset d;
    d.n = 1;
    d.p = p;
    d.L = L;
    d.y = {1};
    d.X = MatrixXd::Zero(1, p);
    MnpModel model{d, random_pd_sigma(L, gen), 1.0};
    VectorXd beta(p * (L - 1)), x(p);
    for (int i = 0; i < beta.size(); ++i) beta[i] = nd(gen);
    for (int i = 0; i < p; ++i) x[i] = nd(gen);
    const VectorXd probs = choice_probabilities(beta, x, model, 2e-7);
    CHECK(probs.sum() == Catch::Approx(1.0).margin(1e-6));
    CHECK(probs.minCoeff() >= 0.0);
  }
}

TEST_CASE("simulation is deterministic and honors frequencies") {
  const VectorXd beta = beta_from_prior(2, 3, 1.0, 5);
  auto [d1, t1] = simulate_dataset(beta, 50, 2, 3, MatrixXd::Identity(3, 3), 123);
  auto [d2, t2] = simulate_dataset(beta, 50, 2, 3, MatrixXd::Identity(3, 3), 123);
  CHECK(d1.y == d2.y);
  CHECK((d1.X - d2.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((t1.utilities - t2.utilities).cwiseAbs().maxCoeff() == 0.0);

  auto [d3, t3] = simulate_dataset(beta, 50, 2, 3, MatrixXd::Identity(3, 3), 124);
  CHECK((d3.X - d1.X).cwiseAbs().maxCoeff() > 0.0);

  // beta = 0 with exchangeable noise: class frequencies near 1/L.
  const int n = 100000, L = 3;
  auto [dz, tz] = simulate_dataset(VectorXd::Zero(2 * 2), n, 2, L, MatrixXd::Identity(L, L), 7);
  const double band = 3.0 * std::sqrt((1.0 / L) * (1.0 - 1.0 / L) / n);
  for (int ell = 1; ell <= L; ++ell) {
    const double freq = static_cast<double>(std::count(dz.y.begin(), dz.y.end(), ell)) / n;
    CHECK(freq == Catch::Approx(1.0 / L).margin(band));
  }

  // A huge class-1 intercept drives class 1 frequency toward one.
  MatrixXd ones_x = MatrixXd::Ones(2000, 1);
  VectorXd big(2);
  big << 50.0, 0.0;
  auto [db, tb] = simulate_dataset(big, 2000, 1, 3, MatrixXd::Identity(3, 3), 9, &ones_x);
  const double freq1 = static_cast<double>(std::count(db.y.begin(), db.y.end(), 1)) / db.n;
  CHECK(freq1 > 0.999);
}

TEST_CASE("model and dataset validation errors") {
  Dataset d;
  d.n = 2;
  d.p = 1;
  d.L = 2;
  d.y = {1, 3};  // out of range
  d.X = MatrixXd::Ones(2, 1);
  CHECK_THROWS_AS(d.validate(), ValidationError);

  d.y = {1, 2};
  d.X(1, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(d.validate(), ValidationError);

  d.X(1, 0) = 0.0;
  MnpModel bad_nu{d, MatrixXd::Identity(2, 2), -1.0};
  CHECK_THROWS_AS(bad_nu.validate(), ValidationError);

  MatrixXd asym(2, 2);
  asym << 1.0, 0.3, -0.3, 1.0;
  MnpModel bad_sigma{d, asym, 1.0};
  CHECK_THROWS_AS(bad_sigma.validate(), ValidationError);

  MatrixXd npd(2, 2);
  npd << 1.0, 2.0, 2.0, 1.0;
  MnpModel bad_pd{d, npd, 1.0};
  CHECK_THROWS_AS(bad_pd.validate(), ValidationError);
}
