#include "sdpd/dgp.hpp"
#include "sdpd/errors.hpp"
#include "sdpd/estimator.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

using namespace sdpd;
using sdpd::testing::labelled_panel;
using sdpd::testing::random_matrix;

namespace {

DGPConfig base_dgp(Eigen::Index n, Eigen::Index T, double rho, double phi, double gamma,
                   std::vector<double> beta, double sigma, std::uint64_t seed) {
  DGPConfig c;
  c.n = n;
  c.T = T;
  c.rho = rho;
  c.phi = phi;
  c.gamma = gamma;
  c.beta = std::move(beta);
  c.sigma = sigma;
  c.seed = seed;
  c.k_neighbors = 4;
  return c;
}

ModelSpec spec_for(const DGPConfig& c, FixedEffects fe) {
  ModelSpec s;
  s.covariate_names = c.covariate_names();
  s.fixed_effects = fe;
  s.k_neighbors = c.k_neighbors;
  return s;
}

}  // namespace

TEST(Fit, NoiselessRecoveryWithTwoWayEffects) {
  auto c = base_dgp(64, 12, 0.4, 0.3, 0.1, {1.0, -0.5}, 0.0, 3);
  c.fe_individual_scale = 1.0;
  c.fe_time_scale = 1.0;
  const auto w = grid_weights(c);
  const auto p = simulate(c, w);
  const auto f = fit(p, w, spec_for(c, FixedEffects::both));
  EXPECT_NEAR(f.rho, 0.4, 1e-4);
  EXPECT_NEAR(f.phi, 0.3, 1e-4);
  EXPECT_NEAR(f.gamma, 0.1, 1e-4);
  EXPECT_NEAR(f.beta[0], 1.0, 1e-4);
  EXPECT_NEAR(f.beta[1], -0.5, 1e-4);
  EXPECT_LE(f.sigma_sq, 1e-8);
}

TEST(ConcentratedLogLik, ExactFitAtTruth) {
  auto c = base_dgp(49, 8, 0.5, 0.2, 0.05, {2.0}, 0.0, 4);
  const auto w = grid_weights(c);
  const auto p = simulate(c, w);
  const auto d = build_design(p, w, spec_for(c, FixedEffects::time));
  const QuasiLikelihood ql(d, w);
  const auto at = ql.concentrated(0.5, 0.2, 0.05);
  EXPECT_NEAR(at.beta[0], 2.0, 1e-10);
  EXPECT_LE(ql.residuals(0.5, 0.2, 0.05, at.beta).norm(), 1e-10);
}

TEST(ConcentratedLogLik, ReducesToVariance) {
  const Eigen::MatrixXd y = random_matrix(10, 6, 2);
  const auto p = labelled_panel(y);
  const auto w = build_knn_weights(p.centroids, 3);
  ModelSpec s;
  s.fixed_effects = FixedEffects::none;
  s.include_time_lag = false;
  s.include_space_time_lag = false;
  s.k_neighbors = 3;
  const auto d = build_design(p, w, s);
  const auto r = concentrated_loglik(Eigen::Vector3d::Zero(), d, w);
  EXPECT_EQ(r.beta.size(), 0);
  EXPECT_NEAR(r.sigma_sq, y.array().square().mean(), 1e-14);
  const double n = static_cast<double>(y.size());
  EXPECT_NEAR(r.loglik, -n / 2.0 * (std::log(2 * M_PI * r.sigma_sq) + 1.0), 1e-10);

  // With two-way demeaning the residual variance uses the degrees of freedom
  // left by the effects.
  s.fixed_effects = FixedEffects::both;
  const auto d2 = build_design(p, w, s);
  const auto r2 = concentrated_loglik(Eigen::Vector3d::Zero(), d2, w);
  const Eigen::MatrixXd yw = within_transform(y, FixedEffects::both);
  EXPECT_NEAR(r2.sigma_sq, yw.squaredNorm() / (9.0 * 5.0), 1e-14);
}

TEST(ConcentratedLogLik, GradientMatchesFiniteDifferences) {
  auto c = base_dgp(36, 10, 0.3, 0.4, 0.1, {1.0}, 1.0, 5);
  c.fe_individual_scale = 1.0;
  const auto w = grid_weights(c);
  const auto p = simulate(c, w);
  for (auto fe : {FixedEffects::none, FixedEffects::both}) {
    const auto d = build_design(p, w, spec_for(c, fe));
    const QuasiLikelihood ql(d, w);
    const Eigen::Vector3d th(0.2, 0.35, 0.15);
    const auto g = ql.concentrated_gradient(th[0], th[1], th[2]);
    for (int j = 0; j < 3; ++j) {
      Eigen::Vector3d a = th, b = th;
      const double h = 1e-6;
      a[j] += h;
      b[j] -= h;
      const double fd =
          (ql.concentrated(a[0], a[1], a[2]).loglik - ql.concentrated(b[0], b[1], b[2]).loglik) / (2 * h);
      EXPECT_NEAR(g[j], fd, 1e-4 * (1.0 + std::abs(fd)));
    }
  }
}

TEST(ConcentratedLogLik, TruthBeatsShiftedRho) {
  auto c = base_dgp(100, 10, 0.4, 0.3, 0.1, {1.0}, 1.0, 0);
  c.fe_individual_scale = 1.0;
  c.fe_time_scale = 1.0;
  const auto w = grid_weights(c);
  const WeightsSpectrum spec(w);
  int wins = 0;
  for (int r = 0; r < 200; ++r) {
    c.seed = replication_seed(77, r);
    const auto p = simulate(c, w);
    const auto d = build_design(p, w, spec_for(c, FixedEffects::both));
    const QuasiLikelihood ql(d, w, LogDetMethod::eigenvalues, &spec);
    if (ql.concentrated(0.4, 0.3, 0.1).loglik >= ql.concentrated(0.6, 0.3, 0.1).loglik) ++wins;
  }
  EXPECT_GE(wins, 190);
}

TEST(Fit, RecoversTimeLagOnlyProcess) {
  auto c = base_dgp(196, 20, 0.0, 0.5, 0.0, {1.0}, 0.1, 0);
  c.fe_time_scale = 1.0;
  const auto w = grid_weights(c);
  const WeightsSpectrum spec(w);
  FitOptions fo;
  fo.spectrum = &spec;
  int hits = 0;
  for (int r = 0; r < 100; ++r) {
    c.seed = replication_seed(13, r);
    const auto f = fit(simulate(c, w), w, spec_for(c, FixedEffects::time), fo);
    if (std::abs(f.rho) <= 0.05 && std::abs(f.phi - 0.5) <= 0.05 && std::abs(f.beta[0] - 1.0) <= 0.05)
      ++hits;
  }
  EXPECT_GE(hits, 90);
}

TEST(Fit, MeanEstimatesWithinTwoMonteCarloErrors) {
  auto c = base_dgp(400, 20, 0.5, 0.2, 0.1, {1.0}, 1.0, 21);
  c.fe_time_scale = 1.0;
  MonteCarloOptions mo;
  mo.replications = 200;
  mo.spec.fixed_effects = FixedEffects::time;
  const auto s = monte_carlo(c, mo);
  EXPECT_EQ(s.failed, 0);
  for (const auto& p : s.parameters) {
    if (p.name == "sigma_sq") continue;
    EXPECT_LE(std::abs(p.mean_bias), 2.0 * p.mc_se) << p.name;
  }
}

TEST(Fit, RestrictedModelIsWithinLeastSquares) {
  auto c = base_dgp(49, 12, 0.0, 0.5, 0.0, {1.0, 0.5}, 1.0, 8);
  c.fe_individual_scale = 1.0;
  c.fe_time_scale = 1.0;
  const auto w = grid_weights(c);
  const auto p = simulate(c, w);
  auto s = spec_for(c, FixedEffects::both);
  s.include_space_time_lag = false;
  FitOptions fo;
  fo.fixed_rho = 0.0;
  const auto f = fit(p, w, s, fo);

  // Direct least squares on two-way demeaned (y_lag, x1, x2).
  const Eigen::Index T = p.T() - 1;
  auto demean = [&](const Eigen::MatrixXd& m) { return within_transform(m, FixedEffects::both); };
  const Eigen::MatrixXd y = demean(p.y.rightCols(T));
  const Eigen::MatrixXd yl = demean(p.y.leftCols(T));
  const Eigen::MatrixXd x1 = demean(p.covariate("x1").rightCols(T));
  const Eigen::MatrixXd x2 = demean(p.covariate("x2").rightCols(T));
  Eigen::MatrixXd a(y.size(), 3);
  a.col(0) = yl.reshaped();
  a.col(1) = x1.reshaped();
  a.col(2) = x2.reshaped();
  const Eigen::VectorXd b = a.colPivHouseholderQr().solve(Eigen::VectorXd(y.reshaped()));
  EXPECT_EQ(f.rho, 0.0);
  EXPECT_EQ(f.gamma, 0.0);
  EXPECT_NEAR(f.phi, b[0], 1e-6);
  EXPECT_NEAR(f.beta[0], b[1], 1e-6);
  EXPECT_NEAR(f.beta[1], b[2], 1e-6);
}

TEST(Fit, OptimumBeatsRandomAdmissiblePoints) {
  auto c = base_dgp(81, 10, 0.3, 0.3, 0.2, {1.0}, 1.0, 31);
  c.fe_individual_scale = 1.0;
  const auto w = grid_weights(c);
  const auto p = simulate(c, w);
  const auto s = spec_for(c, FixedEffects::both);
  const auto f = fit(p, w, s);
  const auto d = build_design(p, w, s);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.99, 0.99);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Vector3d th(u(rng), u(rng), u(rng));
    EXPECT_GE(f.loglik, concentrated_loglik(th, d, w).loglik);
  }
}

TEST(Fit, CovarianceIsSymmetricAndFinite) {
  auto c = base_dgp(100, 10, 0.4, 0.2, 0.1, {1.0, -1.0}, 1.0, 9);
  const auto w = grid_weights(c);
  const auto f = fit(simulate(c, w), w, spec_for(c, FixedEffects::both));
  ASSERT_TRUE(f.vcov_usable);
  EXPECT_EQ(f.vcov.rows(), 6);
  EXPECT_LE((f.vcov - f.vcov.transpose()).cwiseAbs().maxCoeff(), 1e-10);
  EXPECT_TRUE(f.standard_errors().allFinite());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(f.vcov);
  EXPECT_GE(es.eigenvalues().minCoeff(), 0.0);
  EXPECT_GT(f.sigma_sq, 0.0);
  EXPECT_EQ(f.n_obs, f.n_groups * f.n_years);
  EXPECT_EQ(f.n_years, 9);
}

TEST(Fit, StandardErrorsShrinkWithN) {
  std::vector<double> mean_se;
  for (Eigen::Index n : {100, 400, 1600}) {
    auto c = base_dgp(n, 10, 0.4, 0.2, 0.1, {1.0}, 1.0, 0);
    const auto w = grid_weights(c);
    const WeightsSpectrum spec(w);
    FitOptions fo;
    fo.spectrum = &spec;
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(5);
    const int reps = 5;
    for (int r = 0; r < reps; ++r) {
      c.seed = replication_seed(41, r);
      acc += fit(simulate(c, w), w, spec_for(c, FixedEffects::time), fo).standard_errors();
    }
    mean_se.push_back(acc.head(4).mean() / reps);
  }
  EXPECT_GT(mean_se[0], mean_se[1]);
  EXPECT_GT(mean_se[1], mean_se[2]);
  // Roughly 1/sqrt(n): each fourfold increase roughly halves the error.
  EXPECT_NEAR(mean_se[0] / mean_se[1], 2.0, 0.6);
  EXPECT_NEAR(mean_se[1] / mean_se[2], 2.0, 0.6);
}

TEST(Fit, InvariantToUnitReordering) {
  auto c = base_dgp(64, 10, 0.4, 0.3, 0.1, {1.0}, 1.0, 12);
  c.fe_individual_scale = 1.0;
  const auto w = grid_weights(c);
  const auto p = simulate(c, w);
  std::vector<Eigen::Index> perm(64);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
  const auto s = spec_for(c, FixedEffects::both);
  const auto a = fit(p, w, s);
  const auto b = fit(p.select_units(perm), w.permuted(perm), s);
  EXPECT_LE((a.parameters() - b.parameters()).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_NEAR(a.loglik, b.loglik, 1e-8);
}

TEST(Fit, CollinearCovariatesAreNamed) {
  auto c = base_dgp(49, 8, 0.3, 0.2, 0.1, {1.0}, 1.0, 1);
  const auto w = grid_weights(c);
  auto p = simulate(c, w);
  p.covariates.emplace("copy", 2.0 * p.covariate("x1"));
  auto s = spec_for(c, FixedEffects::both);
  s.covariate_names = {"x1", "copy"};
  try {
    fit(p, w, s);
    FAIL() << "expected CollinearityError";
  } catch (const CollinearityError& e) {
    const std::string msg = e.what();
    EXPECT_TRUE(msg.find("copy") != std::string::npos || msg.find("x1") != std::string::npos) << msg;
  }
}

TEST(Fit, TooFewPeriodsRejected) {
  auto c = base_dgp(25, 2, 0.3, 0.2, 0.1, {1.0}, 1.0, 1);
  const auto w = grid_weights(c);
  const auto p = simulate(c, w);
  EXPECT_THROW(fit(p, w, spec_for(c, FixedEffects::both)), ValidationError);
}

TEST(PseudoR2, PerfectFitGivesOne) {
  auto c = base_dgp(49, 10, 0.4, 0.3, 0.1, {1.0}, 0.0, 2);
  const auto w = grid_weights(c);
  const auto f = fit(simulate(c, w), w, spec_for(c, FixedEffects::both));
  ASSERT_TRUE(f.pseudo_r2.within && f.pseudo_r2.between && f.pseudo_r2.overall);
  EXPECT_NEAR(*f.pseudo_r2.within, 1.0, 1e-8);
  EXPECT_NEAR(*f.pseudo_r2.between, 1.0, 1e-8);
  EXPECT_NEAR(*f.pseudo_r2.overall, 1.0, 1e-8);
}

TEST(PseudoR2, OrthogonalFittedValuesGiveNearZero) {
  const Eigen::Index n = 100, T = 25;
  const Eigen::MatrixXd y = random_matrix(n, T, 1);
  Eigen::MatrixXd x = random_matrix(n, T, 2);
  // Remove the overall projection of x on y.
  const Eigen::MatrixXd yc = y.array() - y.mean();
  x -= ((x.array() - x.mean()) * yc.array()).sum() / yc.squaredNorm() * yc;
  const auto p = labelled_panel(y, {{"x", x}});
  const auto w = build_knn_weights(p.centroids, 4);
  ModelSpec s;
  s.covariate_names = {"x"};
  s.fixed_effects = FixedEffects::none;
  s.include_time_lag = false;
  s.include_space_time_lag = false;
  s.k_neighbors = 4;
  FitResult f;
  f.covariate_names = {"x"};
  f.beta = Eigen::VectorXd::Ones(1);
  f.spec = s;
  const auto r = pseudo_r2(f, p, w);
  ASSERT_TRUE(r.within && r.between && r.overall);
  EXPECT_LE(*r.overall, 1e-20);
  EXPECT_LE(*r.within, 0.05);
  EXPECT_LE(*r.between, 0.05);
}

TEST(PseudoR2, BoundedAndUndefinedForConstants) {
  auto c = base_dgp(49, 8, 0.2, 0.4, 0.1, {0.5}, 1.0, 17);
  c.fe_individual_scale = 2.0;
  const auto w = grid_weights(c);
  const auto f = fit(simulate(c, w), w, spec_for(c, FixedEffects::both));
  for (const auto& v : {f.pseudo_r2.within, f.pseudo_r2.between, f.pseudo_r2.overall}) {
    ASSERT_TRUE(v.has_value());
    EXPECT_GE(*v, 0.0);
    EXPECT_LE(*v, 1.0);
  }
  // Constant fitted index: correlation undefined.
  const auto p = labelled_panel(random_matrix(9, 4, 3), {{"x", Eigen::MatrixXd::Ones(9, 4)}});
  const auto w9 = build_knn_weights(p.centroids, 2);
  FitResult g;
  g.covariate_names = {"x"};
  g.beta = Eigen::VectorXd::Ones(1);
  g.spec.covariate_names = {"x"};
  g.spec.fixed_effects = FixedEffects::none;
  g.spec.include_time_lag = false;
  g.spec.include_space_time_lag = false;
  g.spec.k_neighbors = 2;
  const auto r = pseudo_r2(g, p, w9);
  EXPECT_FALSE(r.overall.has_value());
}

namespace {

FitResult wald_fixture(double rho, double phi, double gamma, double var_sum) {
  FitResult f;
  f.rho = rho;
  f.phi = phi;
  f.gamma = gamma;
  f.covariate_names = {"x"};
  f.beta = Eigen::VectorXd::Ones(1);
  f.vcov = Eigen::MatrixXd::Zero(5, 5);
  // Variance of the sum split across the 3x3 block.
  f.vcov(0, 0) = var_sum / 3.0;
  f.vcov(1, 1) = var_sum / 3.0;
  f.vcov(2, 2) = var_sum / 3.0;
  f.vcov(3, 3) = 1.0;
  f.vcov(4, 4) = 1.0;
  f.vcov_usable = true;
  return f;
}

}  // namespace

TEST(Wald, NullPoint) {
  const auto r = wald_cointegration_test(wald_fixture(0.5, 0.3, 0.2, 0.01));
  EXPECT_NEAR(r.wald_stat, 0.0, 1e-28);
  EXPECT_NEAR(r.p_value, 1.0, 1e-12);
  EXPECT_EQ(r.regime, Regime::cointegrated);
}

TEST(Wald, ChiSquareClosedForm) {
  const auto r = wald_cointegration_test(wald_fixture(0.5, 0.4, 0.2, 0.01));
  EXPECT_NEAR(r.sum_rpg, 1.1, 1e-12);
  EXPECT_NEAR(r.wald_stat, 1.0, 1e-10);
  EXPECT_NEAR(r.p_value, 0.3173, 1e-4);
  EXPECT_NEAR(r.p_value, std::erfc(1.0 / std::sqrt(2.0)), 1e-12);
  EXPECT_EQ(r.regime, Regime::cointegrated);
}

TEST(Wald, RegimeBySignWhenRejected) {
  EXPECT_EQ(wald_cointegration_test(wald_fixture(0.3, 0.2, 0.1, 0.01)).regime, Regime::stable);
  EXPECT_EQ(wald_cointegration_test(wald_fixture(0.6, 0.5, 0.2, 0.01)).regime, Regime::explosive);
  const auto r = wald_cointegration_test(wald_fixture(0.3, 0.2, 0.1, 0.01));
  EXPECT_GE(r.wald_stat, 0.0);
  EXPECT_GE(r.p_value, 0.0);
  EXPECT_LE(r.p_value, 1.0);
}

TEST(Wald, OffDiagonalCovarianceEnters) {
  auto f = wald_fixture(0.3, 0.3, 0.3, 0.03);
  f.vcov(0, 1) = f.vcov(1, 0) = 0.005;
  const auto r = wald_cointegration_test(f);
  EXPECT_NEAR(r.variance, 0.04, 1e-14);
  EXPECT_NEAR(r.wald_stat, 0.01 / 0.04, 1e-12);
}

TEST(Wald, NonPositiveVarianceRejected) {
  auto f = wald_fixture(0.3, 0.3, 0.3, 0.03);
  f.vcov(0, 1) = f.vcov(1, 0) = -0.05;
  EXPECT_THROW(wald_cointegration_test(f), EstimationError);
  auto g = wald_fixture(0.3, 0.3, 0.3, 0.03);
  g.vcov_usable = false;
  EXPECT_THROW(wald_cointegration_test(g), EstimationError);
}

TEST(Fit, ExplosiveEstimatesAreReportedNotImposed) {
  auto c = base_dgp(49, 12, 0.3, 0.7, 0.1, {1.0}, 0.5, 6);
  c.regime = RegimeRequest::any;
  c.burn_in = 0;
  const auto w = grid_weights(c);
  const auto f = fit(simulate(c, w), w, spec_for(c, FixedEffects::time));
  EXPECT_GT(f.rho + f.phi + f.gamma, 1.0);
  const bool warned = std::any_of(f.warnings.begin(), f.warnings.end(), [](const std::string& s) {
    return s.find("not stable") != std::string::npos;
  });
  EXPECT_TRUE(warned);
}
