#pragma once

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace sdpd {

struct Coordinate {
  double lon = 0.0;
  double lat = 0.0;
};

enum class FixedEffects { none, individual, time, both };
enum class Differencing { none, time_first_difference };

std::string to_string(FixedEffects fe);
std::string to_string(Differencing d);
FixedEffects parse_fixed_effects(const std::string& s);
Differencing parse_differencing(const std::string& s);

// Balanced n x T panel. Matrices are stored units-by-periods.
struct PanelDataset {
  Eigen::MatrixXd y;
  std::map<std::string, Eigen::MatrixXd> covariates;
  std::vector<Coordinate> centroids;
  std::vector<std::string> unit_ids;
  std::vector<int> period_ids;
  std::vector<std::string> country_of_unit;
  std::string dependent_name = "y";

  Eigen::Index n() const { return y.rows(); }
  Eigen::Index T() const { return y.cols(); }

  bool has_covariate(const std::string& name) const {
    return covariates.count(name) > 0;
  }
  // Throws ValidationError when the covariate is absent.
  const Eigen::MatrixXd& covariate(const std::string& name) const;

  // Keeps the listed units in the given order.
  PanelDataset select_units(std::span<const Eigen::Index> units) const;
};

// Checks shapes, id uniqueness, period ordering and finiteness. Throws
// ValidationError naming the first offending unit/period.
void validate_panel(const PanelDataset& panel);

// Engineered regressors of the fertilizer model. Lagged matrices carry NaN in
// the periods before `first_usable_period`.
struct CovariateSet {
  Eigen::MatrixXd gdp, gdp_sq;
  Eigen::MatrixXd dry, wet;
  Eigen::MatrixXd dry_lag, wet_lag;
  Eigen::MatrixXd gdp_x_drylag, gdp_x_wetlag;
  Eigen::Index first_usable_period = 1;
};

struct ModelSpec {
  std::vector<std::string> covariate_names;
  bool include_time_lag = true;
  bool include_space_time_lag = true;
  FixedEffects fixed_effects = FixedEffects::both;
  Differencing differencing = Differencing::none;
  int k_neighbors = 11;

  // GDP, GDP^2, DRY, WET, DRY_{t-1}, WET_{t-1}, GDP x DRY_{t-1}, GDP x WET_{t-1}.
  static ModelSpec fertilizer_default();

  // Covariate names must resolve against the panel and k < n.
  void validate(const PanelDataset& panel) const;
};

struct SpeiSplit {
  Eigen::MatrixXd dry;
  Eigen::MatrixXd wet;
};

// dry = max(-spei, 0), wet = max(spei, 0). Labels, when given, are used to
// name the offending cell of a non-finite entry.
SpeiSplit split_spei(const Eigen::MatrixXd& spei,
                     std::span<const std::string> unit_ids = {},
                     std::span<const int> period_ids = {});

CovariateSet build_covariates(const PanelDataset& panel, const ModelSpec& spec);

// Differences y and every covariate across consecutive periods; T drops by one.
PanelDataset time_first_difference(const PanelDataset& panel);

// Matrix form: column-difference of an n x T matrix, giving n x (T-1).
Eigen::MatrixXd first_difference(const Eigen::MatrixXd& m);

Eigen::MatrixXd within_transform(const Eigen::MatrixXd& m, FixedEffects fe);
PanelDataset within_transform(const PanelDataset& panel, FixedEffects fe);

// Shift right by one period; the first column becomes NaN.
Eigen::MatrixXd lag_one_period(const Eigen::MatrixXd& m);

}  // namespace sdpd
