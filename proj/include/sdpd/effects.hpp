#pragma once

#include "sdpd/estimator.hpp"
#include "sdpd/panel.hpp"
#include "sdpd/weights.hpp"

#include <Eigen/Dense>

#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace sdpd {

enum class Horizon { short_term, long_term };
std::string to_string(Horizon h);

// Summary of an n x n effect matrix M.
//   direct   = mean of diag(M)
//   indirect = mean of the off-diagonal entries
//   total    = mean row sum = direct + (n - 1) * indirect
struct EffectSummary {
  double direct = 0.0;
  double indirect = 0.0;
  double total = 0.0;

  // Alternative aggregation: direct + mean off-diagonal entry.
  double total_direct_plus_indirect() const { return direct + indirect; }
};

struct SpatialParameters {
  double rho = 0.0;
  double phi = 0.0;
  double gamma = 0.0;

  static SpatialParameters from(const FitResult& fit) { return {fit.rho, fit.phi, fit.gamma}; }
};

// Inverse of the short-run kernel I - rho W, or of the long-run kernel
// (1 - phi) I - (rho + gamma) W, applied to diagonal impact matrices.
class EffectKernel {
 public:
  // Throws CointegratedKernelError for the long-run kernel at
  // rho + phi + gamma = 1 and SingularResolventError otherwise.
  EffectKernel(const SpatialWeights& w, const SpatialParameters& params, Horizon horizon);

  Horizon horizon() const { return horizon_; }

  // Summary of K^{-1} diag(d).
  EffectSummary summarize(const Eigen::VectorXd& d) const;
  EffectSummary summarize(double d) const;
  // Row sums of K^{-1} diag(d), i.e. K^{-1} d.
  Eigen::VectorXd row_sums(const Eigen::VectorXd& d) const;
  // diag(K^{-1}) .* d
  Eigen::VectorXd diagonal(const Eigen::VectorXd& d) const;
  // diag(K^{-1})
  const Eigen::VectorXd& inverse_diagonal() const;
  // K^{-1} B
  Eigen::MatrixXd apply(const Eigen::MatrixXd& b) const;

 private:
  const SpatialWeights* w_;
  Horizon horizon_;
  double scale_ = 1.0;  // K^{-1} = scale * (I - rho_eff W)^{-1}
  double rho_eff_ = 0.0;
  std::unique_ptr<Resolvent> resolvent_;
  mutable std::optional<Eigen::VectorXd> diag_;
  mutable std::optional<Eigen::VectorXd> column_sums_;  // K^{-T} 1
};

// d_i = sum_h beta_h * d term_h / d x_{covariate, t - lag}, per unit, at
// period index t of the panel (levels). NaN when a lag is unavailable.
Eigen::VectorXd marginal_weights(const FitResult& fit, const PanelDataset& panel,
                                 const std::string& covariate, Eigen::Index t, int lag = 0);

// True when the covariate's marginal weight involves data (squares or
// interactions), making its effects time-varying.
bool has_data_dependent_weights(const FitResult& fit, const std::string& covariate, int lag = 0);

// Effects of a covariate without data-dependent terms (e.g. dry, wet).
EffectSummary short_term_effects(const FitResult& fit, const SpatialWeights& w,
                                 const std::string& covariate);
EffectSummary long_term_effects(const FitResult& fit, const SpatialWeights& w,
                                const std::string& covariate);

// Effects at period index t; the panel supplies the diag terms.
EffectSummary short_term_effects(const FitResult& fit, const SpatialWeights& w,
                                 const PanelDataset& panel, const std::string& covariate,
                                 Eigen::Index t);
EffectSummary long_term_effects(const FitResult& fit, const SpatialWeights& w,
                                const PanelDataset& panel, const std::string& covariate,
                                Eigen::Index t);

struct PeriodEffect {
  int period = 0;
  EffectSummary effect;
};

// Per-period effects for every period where the marginal weights exist.
std::vector<PeriodEffect> time_varying_effects(const FitResult& fit, const SpatialWeights& w,
                                               const PanelDataset& panel,
                                               const std::string& covariate, Horizon horizon);

// Convergence effects: summary of (I - rho W)^{-1} [(phi - 1) I + (rho + gamma) W].
EffectSummary ecm_convergence_effects(const FitResult& fit, const SpatialWeights& w);

struct LaggedEffect {
  int period = 0;
  double mean = 0.0;           // cross-sectional mean of the diagonal
  Eigen::VectorXd per_unit;    // diagonal entries
};

// d E(dy_t) / d x_{covariate, t-1} = diag(beta_lag + beta_interaction * x_t ...).
std::vector<LaggedEffect> ecm_lagged_effects(const FitResult& fit, const PanelDataset& panel,
                                             const std::string& covariate);

struct WeatherLaggedEffects {
  std::vector<LaggedEffect> dry;
  std::vector<LaggedEffect> wet;
};
WeatherLaggedEffects ecm_lagged_weather_effects(const FitResult& fit, const PanelDataset& panel);

struct LocalEffects {
  Eigen::VectorXd row_sum;   // direct + incoming indirect
  Eigen::VectorXd direct;    // diagonal only
  Eigen::VectorXd indirect;  // off-diagonal row sums
};

// Unit-level effects from the rows of the effect matrix. `t` selects the
// period for covariates with data-dependent weights (ignored otherwise).
LocalEffects local_effects(const FitResult& fit, const SpatialWeights& w,
                           const std::string& covariate, Horizon horizon = Horizon::short_term,
                           const PanelDataset* panel = nullptr, Eigen::Index t = -1);

struct EffectRow {
  std::string variable;
  Horizon horizon = Horizon::short_term;
  EffectSummary effect;
};

struct TimeVaryingSeries {
  std::string variable;
  Horizon horizon = Horizon::short_term;
  std::vector<PeriodEffect> series;
};

struct LocalMap {
  std::string variable;
  Horizon horizon = Horizon::short_term;
  LocalEffects values;
};

struct SkipRecord {
  std::string item;
  std::string reason;
};

struct EffectsReport {
  std::vector<EffectRow> table;
  std::vector<TimeVaryingSeries> time_varying;
  std::optional<EffectSummary> ecm_convergence;
  std::vector<std::pair<std::string, std::vector<LaggedEffect>>> ecm_lagged;
  std::vector<LocalMap> local;
  std::vector<SkipRecord> skipped;
};

// Evaluates every effect object for the given contemporaneous covariates.
// Long-run items that hit a singular kernel are recorded in `skipped`.
EffectsReport compute_effects(const FitResult& fit, const SpatialWeights& w,
                              const PanelDataset& panel, const std::vector<std::string>& covariates);

// Covariates with a contemporaneous linear or squared term in the model.
std::vector<std::string> contemporaneous_covariates(const FitResult& fit, const PanelDataset& panel);

}  // namespace sdpd
