#pragma once

#include "sdpd/panel.hpp"
#include "sdpd/terms.hpp"
#include "sdpd/weights.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace sdpd {

// Estimation sample: lagged, optionally differenced, then within-transformed.
// Spatial lags are taken before demeaning so that W acts on the levels of
// each cross-section.
struct EstimationDesign {
  Eigen::Index n = 0;
  Eigen::Index periods = 0;  // T*, usable periods
  FixedEffects fixed_effects = FixedEffects::both;
  bool time_lag = true;
  bool space_time_lag = true;
  std::vector<int> period_ids;
  std::vector<std::string> names;
  std::vector<Term> terms;

  // Transformed (n x T*).
  Eigen::MatrixXd y, wy, y_lag, wy_lag;
  std::vector<Eigen::MatrixXd> x;

  // Same sample before the within transformation.
  Eigen::MatrixXd raw_y, raw_wy, raw_y_lag, raw_wy_lag;
  std::vector<Eigen::MatrixXd> raw_x;

  // Cross-sectional and temporal degrees of freedom left by the fixed effects.
  double effective_units() const;
  double effective_periods() const;
  double effective_obs() const { return effective_units() * effective_periods(); }
};

EstimationDesign build_design(const PanelDataset& panel, const SpatialWeights& w,
                              const ModelSpec& spec);

enum class LogDetMethod { automatic, sparse_lu, eigenvalues };

struct ConcentratedLogLik {
  double loglik = 0.0;
  Eigen::VectorXd beta;
  double sigma_sq = 0.0;
  double ssr = 0.0;
};

// Gaussian quasi-likelihood of the spatial dynamic panel model. The data
// cross-products are reduced once by a QR factorization, so each evaluation
// costs one log-determinant plus O((k+4)^2).
//
// Concentrated form, with N the effective observations and m the effective
// periods:
//   lnL(rho, phi, gamma) = -N/2 (ln(2 pi s2) + 1) + m J(rho),  s2 = SSR / N
//   J(rho) = ln|I - rho W|  (- ln(1 - rho) when time effects are removed)
class QuasiLikelihood {
 public:
  QuasiLikelihood(const EstimationDesign& design, const SpatialWeights& w,
                  LogDetMethod method = LogDetMethod::automatic,
                  const WeightsSpectrum* spectrum = nullptr);

  Eigen::Index covariate_count() const { return k_; }
  double effective_obs() const { return n_eff_; }
  double effective_periods() const { return m_eff_; }

  ConcentratedLogLik concentrated(double rho, double phi, double gamma) const;
  // Gradient of the concentrated log-likelihood in (rho, phi, gamma).
  Eigen::Vector3d concentrated_gradient(double rho, double phi, double gamma) const;

  // Full quasi-likelihood at (rho, phi, gamma, beta..., sigma_sq).
  double full(const Eigen::VectorXd& params) const;

  // Unconcentrated residual matrix (n x T*) for given coefficients.
  Eigen::MatrixXd residuals(double rho, double phi, double gamma, const Eigen::VectorXd& beta) const;

  // Least squares of y on (Wy, y_lag, W y_lag, X): the start point that is
  // exact on noiseless data.
  Eigen::Vector3d ols_start() const;

  double jacobian(double rho) const;
  double jacobian_derivative(double rho) const;

 private:
  double log_det(double rho) const;

  const EstimationDesign* design_;
  const SpatialWeights* w_;
  const WeightsSpectrum* spectrum_ = nullptr;
  std::optional<WeightsSpectrum> owned_spectrum_;
  Eigen::Index k_ = 0;
  double n_eff_ = 0.0;
  double m_eff_ = 0.0;
  bool time_effects_ = false;
  Eigen::VectorXd scale_;       // column norms of X
  Eigen::MatrixXd r_;           // R of QR([X/scale, y, wy, y_lag, wy_lag])
  Eigen::Matrix4d q_;           // R_aa' R_aa: SSR = c' q c
};

// Concentrated log-likelihood at theta = (rho, phi, gamma).
ConcentratedLogLik concentrated_loglik(const Eigen::Vector3d& theta, const EstimationDesign& design,
                                       const SpatialWeights& w,
                                       LogDetMethod method = LogDetMethod::automatic);

struct PseudoR2 {
  std::optional<double> within;
  std::optional<double> between;
  std::optional<double> overall;
};

struct FixedEffectSummary {
  Eigen::VectorXd individual;  // per unit (empty when not estimated)
  Eigen::VectorXd time;        // per usable period
  double individual_mean = 0.0;
  double individual_sd = 0.0;
  double time_mean = 0.0;
  double time_sd = 0.0;
};

struct Convergence {
  int starts = 0;
  int failed_starts = 0;
  int best_start = -1;
  int iterations = 0;
  double gradient_norm = 0.0;
  std::string status;
};

struct FitResult {
  double rho = 0.0;
  double phi = 0.0;
  double gamma = 0.0;
  std::vector<std::string> covariate_names;
  Eigen::VectorXd beta;
  double sigma_sq = 0.0;
  // Order: rho, phi, gamma, beta..., sigma_sq.
  Eigen::MatrixXd vcov;
  bool vcov_usable = false;
  double loglik = 0.0;
  Eigen::Index n_obs = 0;
  Eigen::Index n_groups = 0;
  Eigen::Index n_years = 0;
  FixedEffectSummary fixed_effects;
  PseudoR2 pseudo_r2;
  Convergence convergence;
  ModelSpec spec;
  std::vector<int> period_ids;
  std::vector<std::string> warnings;

  std::vector<std::string> parameter_names() const;
  Eigen::VectorXd parameters() const;
  Eigen::VectorXd standard_errors() const;
  // Coefficient of a covariate term, 0 if the term is not in the model.
  double coefficient(const std::string& name) const;
};

struct FitOptions {
  int starts = 5;
  double gradient_tolerance = 1e-8;
  int max_iterations = 500;
  LogDetMethod logdet = LogDetMethod::automatic;
  // Reused across fits sharing W (Monte Carlo).
  const WeightsSpectrum* spectrum = nullptr;
  // Holds rho at a fixed value instead of estimating it.
  std::optional<double> fixed_rho;
  std::uint64_t start_seed = 0x5d9d2019ULL;
  // Admissible rho is (-rho_bound, rho_bound).
  double rho_bound = 0.999;
};

FitResult fit(const PanelDataset& panel, const SpatialWeights& w, const ModelSpec& spec,
              const FitOptions& options = {});
FitResult fit(const EstimationDesign& design, const SpatialWeights& w, const ModelSpec& spec,
              const FitOptions& options = {});

// Squared correlations of the structural fitted index (no fixed effects) with
// y: within-transformed, unit means, and raw sample.
PseudoR2 pseudo_r2(const FitResult& fit, const EstimationDesign& design);
PseudoR2 pseudo_r2(const FitResult& fit, const PanelDataset& panel, const SpatialWeights& w);

enum class Regime { stable, cointegrated, explosive };
std::string to_string(Regime r);

struct StabilityReport {
  double sum_rpg = 0.0;
  double variance = 0.0;
  double wald_stat = 0.0;
  double p_value = 1.0;
  double alpha = 0.05;
  Regime regime = Regime::cointegrated;
};

// Wald test of rho + phi + gamma = 1 with W = s^2 / (a' V a), a = (1,1,1,0').
StabilityReport wald_cointegration_test(const FitResult& fit, double alpha = 0.05);

// Upper tail of chi-square(1).
double chi2_1_survival(double x);
// Two-sided normal p-value of a z statistic.
double normal_two_sided_p(double z);

}  // namespace sdpd
