#pragma once

#include "sdpd/estimator.hpp"
#include "sdpd/panel.hpp"
#include "sdpd/weights.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace sdpd {

enum class CovariateGenerator { iid_normal, truncated_pair, country_block };
enum class RegimeRequest { any, stable, cointegrated };

std::string to_string(CovariateGenerator g);
CovariateGenerator parse_covariate_generator(const std::string& s);
std::string to_string(RegimeRequest r);
RegimeRequest parse_regime_request(const std::string& s);

// Forward simulation of
//   y_t = (I - rho W)^{-1} [phi y_{t-1} + gamma W y_{t-1} + X_t beta + alpha + xi_t 1 + eps_t]
// on a sqrt(n) x sqrt(n) grid with k-nearest-neighbor weights.
struct DGPConfig {
  Eigen::Index n = 100;
  Eigen::Index T = 10;
  Eigen::Index burn_in = 50;
  double rho = 0.0;
  double phi = 0.0;
  double gamma = 0.0;
  std::vector<double> beta = {1.0};
  double sigma = 1.0;
  double fe_individual_scale = 0.0;
  double fe_time_scale = 0.0;
  CovariateGenerator covariate_generator = CovariateGenerator::iid_normal;
  // Units per block for the country-block generator; 0 means one grid row.
  Eigen::Index block_size = 0;
  int k_neighbors = 4;
  // Initial condition y_0 = y0 * 1.
  double y0 = 0.0;
  RegimeRequest regime = RegimeRequest::stable;
  std::uint64_t seed = 1;

  // Throws ValidationError; sigma may be zero for noiseless identification.
  void validate() const;
  std::vector<std::string> covariate_names() const;
};

// Cell centroids of the synthetic grid, row-major, unit spacing.
std::vector<Coordinate> grid_centroids(Eigen::Index n);
SpatialWeights grid_weights(const DGPConfig& config);

PanelDataset simulate(const DGPConfig& config);
PanelDataset simulate(const DGPConfig& config, const SpatialWeights& w);

enum class Experiment { bias, wald_size, wald_power, effect_identity };
std::string to_string(Experiment e);
Experiment parse_experiment(const std::string& s);

struct MonteCarloOptions {
  int replications = 100;
  Experiment experiment = Experiment::bias;
  int threads = 1;
  double alpha = 0.05;
  // Model fitted to every replication. Empty covariate list means the
  // generated covariates x1..xk.
  ModelSpec spec;
  FitOptions fit;
};

struct ParameterSummary {
  std::string name;
  double truth = 0.0;
  double mean = 0.0;
  double mean_bias = 0.0;
  double rmse = 0.0;
  double sd = 0.0;
  double mc_se = 0.0;  // sd / sqrt(R)
};

struct ReplicationOutcome {
  bool ok = false;
  std::string error;
  Eigen::VectorXd estimates;  // rho, phi, gamma, beta..., sigma_sq
  double wald_p = 1.0;
  bool rejected = false;
  double identity_error = 0.0;
};

struct MonteCarloSummary {
  Experiment experiment = Experiment::bias;
  int requested = 0;
  int succeeded = 0;
  int failed = 0;
  std::vector<std::string> failures;  // "rep <i>: <message>"
  std::vector<ParameterSummary> parameters;
  double rejection_rate = 0.0;
  double rejection_se = 0.0;
  double max_identity_error = 0.0;
  double seconds = 0.0;
};

// Replication r draws from its own stream seeded by (config.seed, r); the
// aggregate is computed in replication order and does not depend on thread
// scheduling.
MonteCarloSummary monte_carlo(const DGPConfig& config, const MonteCarloOptions& options);

// Aggregation step, exposed for testing order invariance.
MonteCarloSummary summarize_replications(const DGPConfig& config, Experiment experiment,
                                         const std::vector<ReplicationOutcome>& outcomes);

std::uint64_t replication_seed(std::uint64_t seed, int replication);

}  // namespace sdpd
