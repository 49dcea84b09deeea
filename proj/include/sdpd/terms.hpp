#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace sdpd {

struct PanelDataset;

// A regressor term is a product of factors, each a raw covariate possibly
// lagged one period and possibly squared.
//
//   gdp            -> gdp_t
//   gdp_sq         -> gdp_t^2
//   dry_lag        -> dry_{t-1}        (alias: drylag)
//   gdp_x_drylag   -> gdp_t * dry_{t-1}
struct Factor {
  std::string base;
  int lag = 0;
  int power = 1;

  bool operator==(const Factor&) const = default;
};

struct Term {
  std::string name;
  std::vector<Factor> factors;

  int max_lag() const;
};

using BaseLookup = std::function<bool(const std::string&)>;

// Throws ValidationError("unknown covariate ...") when a factor does not
// resolve to a base covariate.
Term parse_term(const std::string& name, const BaseLookup& is_base);
Term parse_term(const std::string& name, const PanelDataset& panel);

// n x T values; periods without the required lag are NaN.
Eigen::MatrixXd evaluate_term(const Term& term, const PanelDataset& panel);

// Partial derivative of the term with respect to x_{base, t - lag}, evaluated
// per unit and period (n x T, NaN where unavailable). Zero when the term does
// not involve that factor.
Eigen::MatrixXd term_derivative(const Term& term, const PanelDataset& panel,
                                const std::string& base, int lag);

bool term_involves(const Term& term, const std::string& base, int lag);

}  // namespace sdpd
