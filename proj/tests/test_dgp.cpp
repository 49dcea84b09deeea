#include "sdpd/dgp.hpp"
#include "sdpd/errors.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace sdpd;

TEST(Simulate, ClosedFormFirstStep) {
  DGPConfig c;
  c.n = 25;
  c.T = 3;
  c.burn_in = 0;
  c.rho = 0.5;
  c.phi = 0.2;
  c.gamma = 0.05;
  c.beta = {};
  c.sigma = 0.0;
  c.y0 = 1.0;
  const auto p = simulate(c);
  for (Eigen::Index i = 0; i < 25; ++i) {
    EXPECT_NEAR(p.y(i, 0), 0.5, 1e-14);
    EXPECT_NEAR(p.y(i, 1), 0.25, 1e-14);
  }
}

TEST(Simulate, SameSeedIsBitIdentical) {
  DGPConfig c;
  c.n = 36;
  c.T = 8;
  c.rho = 0.3;
  c.phi = 0.3;
  c.gamma = 0.1;
  c.beta = {1.0, -2.0};
  c.fe_individual_scale = 1.0;
  c.fe_time_scale = 0.5;
  c.seed = 42;
  const auto a = simulate(c);
  const auto b = simulate(c);
  EXPECT_EQ(a.y, b.y);
  EXPECT_EQ(a.covariate("x1"), b.covariate("x1"));
  EXPECT_EQ(a.covariate("x2"), b.covariate("x2"));
  c.seed = 43;
  EXPECT_NE(simulate(c).y, a.y);
}

TEST(Simulate, ShapesAndLabels) {
  DGPConfig c;
  c.n = 10;  // non-square n still works on a 4x4 grid
  c.T = 5;
  const auto p = simulate(c);
  EXPECT_EQ(p.n(), 10);
  EXPECT_EQ(p.T(), 5);
  EXPECT_EQ(p.unit_ids.front(), "u00000");
  EXPECT_EQ(p.period_ids.back(), 5);
  EXPECT_NO_THROW(validate_panel(p));
}

TEST(Simulate, TruncatedPairIsExclusive) {
  DGPConfig c;
  c.n = 49;
  c.T = 10;
  c.beta = {-0.5, 0.5};
  c.covariate_generator = CovariateGenerator::truncated_pair;
  const auto p = simulate(c);
  const auto& dry = p.covariate("x1");
  const auto& wet = p.covariate("x2");
  EXPECT_EQ(dry.cwiseProduct(wet).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GE(dry.minCoeff(), 0.0);
  EXPECT_GE(wet.minCoeff(), 0.0);
  EXPECT_GT(dry.maxCoeff(), 0.0);
  EXPECT_GT(wet.maxCoeff(), 0.0);
}

TEST(Simulate, CountryBlockCovariatesAreConstantWithinBlocks) {
  DGPConfig c;
  c.n = 36;
  c.T = 4;
  c.block_size = 6;
  c.covariate_generator = CovariateGenerator::country_block;
  const auto p = simulate(c);
  const auto& x = p.covariate("x1");
  for (Eigen::Index i = 0; i < 36; ++i) {
    EXPECT_EQ(x.row(i), x.row((i / 6) * 6));
    EXPECT_EQ(p.country_of_unit[i], p.country_of_unit[(i / 6) * 6]);
  }
  EXPECT_NE(x.row(0), x.row(6));
}

TEST(Simulate, StableProcessHasNoVarianceTrend) {
  DGPConfig c;
  c.n = 100;
  c.T = 100;
  c.rho = 0.4;
  c.phi = 0.3;
  c.gamma = 0.2;
  c.seed = 5;
  const auto p = simulate(c);
  // Regress the per-period cross-sectional variance on t.
  Eigen::VectorXd v(c.T), t(c.T);
  for (Eigen::Index j = 0; j < c.T; ++j) {
    const Eigen::VectorXd col = p.y.col(j);
    v[j] = (col.array() - col.mean()).square().sum() / (c.n - 1);
    t[j] = static_cast<double>(j);
  }
  const double tm = t.mean(), vm = v.mean();
  const double sxx = (t.array() - tm).square().sum();
  const double slope = ((t.array() - tm) * (v.array() - vm)).sum() / sxx;
  const Eigen::VectorXd resid = (v.array() - vm - slope * (t.array() - tm)).matrix();
  const double se = std::sqrt(resid.squaredNorm() / (c.T - 2) / sxx);
  EXPECT_LT(std::abs(slope / se), 2.0);
}

TEST(DgpConfig, RegimeValidation) {
  DGPConfig c;
  c.rho = 0.5;
  c.phi = 0.4;
  c.gamma = 0.1;
  c.regime = RegimeRequest::stable;
  EXPECT_THROW(c.validate(), ValidationError);
  c.regime = RegimeRequest::cointegrated;
  EXPECT_NO_THROW(c.validate());
  c.phi = 0.3;
  EXPECT_THROW(c.validate(), ValidationError);
  c.regime = RegimeRequest::any;
  c.sigma = -1.0;
  EXPECT_THROW(c.validate(), ValidationError);
  EXPECT_THROW(parse_regime_request("chaotic"), ValidationError);
  EXPECT_THROW(parse_experiment("coverage"), ValidationError);
}

TEST(MonteCarlo, SingleReplicationEqualsItsFit) {
  DGPConfig c;
  c.n = 49;
  c.T = 10;
  c.rho = 0.3;
  c.phi = 0.3;
  c.gamma = 0.1;
  c.seed = 8;
  MonteCarloOptions mo;
  mo.replications = 1;
  mo.spec.fixed_effects = FixedEffects::time;
  const auto s = monte_carlo(c, mo);
  ASSERT_EQ(s.succeeded, 1);

  DGPConfig r = c;
  r.seed = replication_seed(c.seed, 0);
  const auto w = grid_weights(c);
  ModelSpec spec = mo.spec;
  spec.covariate_names = c.covariate_names();
  spec.k_neighbors = c.k_neighbors;
  const auto f = fit(simulate(r, w), w, spec);
  const auto est = f.parameters();
  ASSERT_EQ(s.parameters.size(), static_cast<std::size_t>(est.size()));
  for (std::size_t j = 0; j < s.parameters.size(); ++j) {
    EXPECT_NEAR(s.parameters[j].mean, est[static_cast<Eigen::Index>(j)], 1e-9);
    EXPECT_EQ(s.parameters[j].sd, 0.0);
  }
}

TEST(MonteCarlo, ThreadCountDoesNotChangeResults) {
  DGPConfig c;
  c.n = 36;
  c.T = 8;
  c.rho = 0.2;
  c.phi = 0.4;
  c.seed = 9;
  MonteCarloOptions mo;
  mo.replications = 12;
  mo.experiment = Experiment::wald_power;
  mo.threads = 1;
  const auto a = monte_carlo(c, mo);
  mo.threads = 4;
  const auto b = monte_carlo(c, mo);
  ASSERT_EQ(a.parameters.size(), b.parameters.size());
  for (std::size_t j = 0; j < a.parameters.size(); ++j) {
    EXPECT_EQ(a.parameters[j].mean, b.parameters[j].mean);
    EXPECT_EQ(a.parameters[j].rmse, b.parameters[j].rmse);
  }
  EXPECT_EQ(a.rejection_rate, b.rejection_rate);
}

TEST(MonteCarlo, AggregationIsPermutationInvariant) {
  DGPConfig c;
  c.beta = {1.0};
  std::vector<ReplicationOutcome> outcomes;
  std::mt19937_64 rng(1);
  std::normal_distribution<double> z;
  for (int r = 0; r < 50; ++r) {
    ReplicationOutcome o;
    o.ok = r % 7 != 3;
    o.error = "boom";
    o.estimates = Eigen::VectorXd(5);
    for (int j = 0; j < 5; ++j) o.estimates[j] = z(rng) * 1e3 + 1e-3 * z(rng);
    o.rejected = r % 3 == 0;
    outcomes.push_back(o);
  }
  const auto a = summarize_replications(c, Experiment::bias, outcomes);
  auto shuffled = outcomes;
  std::shuffle(shuffled.begin(), shuffled.end(), std::mt19937_64(2));
  const auto b = summarize_replications(c, Experiment::bias, shuffled);
  EXPECT_EQ(a.failed, 7);
  EXPECT_EQ(a.failures.size(), 7u);
  for (std::size_t j = 0; j < a.parameters.size(); ++j) {
    EXPECT_EQ(a.parameters[j].mean, b.parameters[j].mean);
    EXPECT_EQ(a.parameters[j].rmse, b.parameters[j].rmse);
    EXPECT_EQ(a.parameters[j].sd, b.parameters[j].sd);
  }
  EXPECT_EQ(a.rejection_rate, b.rejection_rate);
}

TEST(MonteCarlo, EffectIdentityExperiment) {
  DGPConfig c;
  c.n = 49;
  c.T = 8;
  c.rho = 0.4;
  c.phi = 0.2;
  c.gamma = 0.1;
  c.beta = {1.0, 0.5};
  MonteCarloOptions mo;
  mo.replications = 5;
  mo.experiment = Experiment::effect_identity;
  const auto s = monte_carlo(c, mo);
  EXPECT_EQ(s.succeeded, 5);
  EXPECT_LE(s.max_identity_error, 1e-10);
}

TEST(MonteCarlo, FailuresAreCountedNotDropped) {
  DGPConfig c;
  c.n = 16;
  c.T = 2;  // too short to fit a dynamic model
  MonteCarloOptions mo;
  mo.replications = 3;
  const auto s = monte_carlo(c, mo);
  EXPECT_EQ(s.requested, 3);
  EXPECT_EQ(s.failed, 3);
  EXPECT_EQ(s.failures.size(), 3u);
  EXPECT_TRUE(s.parameters.empty());
}
