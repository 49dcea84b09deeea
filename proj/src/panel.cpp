#include "sdpd/panel.hpp"

#include "sdpd/errors.hpp"
#include "sdpd/terms.hpp"

#include <fmt/format.h>

#include <cmath>
#include <limits>
#include <set>

namespace sdpd {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void check_shape(const Eigen::MatrixXd& m, Eigen::Index n, Eigen::Index T,
                 const std::string& what) {
  if (m.rows() != n || m.cols() != T)
    throw ValidationError(fmt::format("{} has shape {}x{}, expected {}x{}", what,
                                      m.rows(), m.cols(), n, T));
}

void check_finite(const Eigen::MatrixXd& m, const PanelDataset& p,
                  const std::string& what) {
  for (Eigen::Index t = 0; t < m.cols(); ++t)
    for (Eigen::Index i = 0; i < m.rows(); ++i)
      if (!std::isfinite(m(i, t))) {
        auto unit = i < static_cast<Eigen::Index>(p.unit_ids.size())
                        ? p.unit_ids[i]
                        : std::to_string(i);
        auto period = t < static_cast<Eigen::Index>(p.period_ids.size())
                          ? std::to_string(p.period_ids[t])
                          : std::to_string(t);
        throw ValidationError(fmt::format("{} is missing or non-finite at unit {}, period {}",
                                          what, unit, period));
      }
}

}  // namespace

std::string to_string(FixedEffects fe) {
  switch (fe) {
    case FixedEffects::none: return "none";
    case FixedEffects::individual: return "individual";
    case FixedEffects::time: return "time";
    case FixedEffects::both: return "both";
  }
  return "?";
}

std::string to_string(Differencing d) {
  return d == Differencing::none ? "none" : "time_first_difference";
}

FixedEffects parse_fixed_effects(const std::string& s) {
  if (s == "none") return FixedEffects::none;
  if (s == "individual") return FixedEffects::individual;
  if (s == "time") return FixedEffects::time;
  if (s == "both") return FixedEffects::both;
  throw ValidationError("unknown fixed_effects '" + s + "' (none|individual|time|both)");
}

Differencing parse_differencing(const std::string& s) {
  if (s == "none") return Differencing::none;
  if (s == "time_first_difference" || s == "first_difference")
    return Differencing::time_first_difference;
  throw ValidationError("unknown differencing '" + s + "' (none|time_first_difference)");
}

const Eigen::MatrixXd& PanelDataset::covariate(const std::string& name) const {
  auto it = covariates.find(name);
  if (it == covariates.end()) throw ValidationError("unknown covariate '" + name + "'");
  return it->second;
}

PanelDataset PanelDataset::select_units(std::span<const Eigen::Index> units) const {
  PanelDataset out;
  const auto m = static_cast<Eigen::Index>(units.size());
  out.y.resize(m, T());
  for (Eigen::Index r = 0; r < m; ++r) out.y.row(r) = y.row(units[r]);
  for (const auto& [name, x] : covariates) {
    Eigen::MatrixXd sub(m, T());
    for (Eigen::Index r = 0; r < m; ++r) sub.row(r) = x.row(units[r]);
    out.covariates.emplace(name, std::move(sub));
  }
  for (auto u : units) {
    if (!centroids.empty()) out.centroids.push_back(centroids[u]);
    if (!unit_ids.empty()) out.unit_ids.push_back(unit_ids[u]);
    if (!country_of_unit.empty()) out.country_of_unit.push_back(country_of_unit[u]);
  }
  out.period_ids = period_ids;
  out.dependent_name = dependent_name;
  return out;
}

void validate_panel(const PanelDataset& p) {
  const auto n = p.n();
  const auto T = p.T();
  if (n == 0 || T == 0) throw ValidationError("panel is empty");
  if (static_cast<Eigen::Index>(p.unit_ids.size()) != n)
    throw ValidationError(fmt::format("{} unit ids for {} units", p.unit_ids.size(), n));
  if (static_cast<Eigen::Index>(p.period_ids.size()) != T)
    throw ValidationError(fmt::format("{} period ids for {} periods", p.period_ids.size(), T));
  if (static_cast<Eigen::Index>(p.centroids.size()) != n)
    throw ValidationError(fmt::format("{} centroids for {} units", p.centroids.size(), n));
  if (!p.country_of_unit.empty() && static_cast<Eigen::Index>(p.country_of_unit.size()) != n)
    throw ValidationError("country labels do not match unit count");

  std::set<std::string> seen;
  for (const auto& id : p.unit_ids)
    if (!seen.insert(id).second) throw ValidationError("duplicate unit id '" + id + "'");
  for (std::size_t t = 1; t < p.period_ids.size(); ++t)
    if (p.period_ids[t] <= p.period_ids[t - 1])
      throw ValidationError(fmt::format("period ids not strictly increasing at {}",
                                        p.period_ids[t]));
  for (Eigen::Index i = 0; i < n; ++i)
    if (!std::isfinite(p.centroids[i].lon) || !std::isfinite(p.centroids[i].lat))
      throw ValidationError("non-finite centroid for unit " + p.unit_ids[i]);

  check_finite(p.y, p, p.dependent_name);
  for (const auto& [name, x] : p.covariates) {
    check_shape(x, n, T, "covariate '" + name + "'");
    check_finite(x, p, "covariate '" + name + "'");
  }
}

ModelSpec ModelSpec::fertilizer_default() {
  ModelSpec s;
  s.covariate_names = {"gdp",     "gdp_sq",  "dry",          "wet",
                       "dry_lag", "wet_lag", "gdp_x_drylag", "gdp_x_wetlag"};
  return s;
}

void ModelSpec::validate(const PanelDataset& panel) const {
  if (k_neighbors < 1) throw ValidationError("k_neighbors must be positive");
  if (k_neighbors >= panel.n())
    throw ValidationError(fmt::format("k_neighbors = {} must be smaller than n = {}",
                                      k_neighbors, panel.n()));
  std::set<std::string> names;
  for (const auto& c : covariate_names) {
    if (!names.insert(c).second) throw ValidationError("duplicate covariate '" + c + "'");
    parse_term(c, panel);
  }
}

SpeiSplit split_spei(const Eigen::MatrixXd& spei, std::span<const std::string> unit_ids,
                     std::span<const int> period_ids) {
  for (Eigen::Index t = 0; t < spei.cols(); ++t)
    for (Eigen::Index i = 0; i < spei.rows(); ++i)
      if (!std::isfinite(spei(i, t))) {
        auto unit = static_cast<std::size_t>(i) < unit_ids.size() ? unit_ids[i]
                                                                  : std::to_string(i);
        auto period = static_cast<std::size_t>(t) < period_ids.size()
                          ? std::to_string(period_ids[t])
                          : std::to_string(t);
        throw ValidationError(
            fmt::format("non-finite SPEI at unit {}, period {}", unit, period));
      }
  SpeiSplit out;
  out.dry = (-spei.array()).max(0.0);
  out.wet = spei.array().max(0.0);
  return out;
}

Eigen::MatrixXd lag_one_period(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  if (m.cols() == 0) return out;
  out.col(0).setConstant(kNaN);
  if (m.cols() > 1) out.rightCols(m.cols() - 1) = m.leftCols(m.cols() - 1);
  return out;
}

CovariateSet build_covariates(const PanelDataset& panel, const ModelSpec& spec) {
  for (const char* base : {"gdp", "dry", "wet"})
    if (!panel.has_covariate(base))
      throw ValidationError(std::string("unknown covariate '") + base + "'");
  if (panel.T() < 2)
    throw ValidationError("at least 2 periods are required to build lagged covariates");
  for (const auto& c : spec.covariate_names) parse_term(c, panel);

  CovariateSet cs;
  cs.gdp = panel.covariate("gdp");
  cs.dry = panel.covariate("dry");
  cs.wet = panel.covariate("wet");
  cs.gdp_sq = cs.gdp.array().square();
  cs.dry_lag = lag_one_period(cs.dry);
  cs.wet_lag = lag_one_period(cs.wet);
  cs.gdp_x_drylag = cs.gdp.array() * cs.dry_lag.array();
  cs.gdp_x_wetlag = cs.gdp.array() * cs.wet_lag.array();
  cs.first_usable_period = 1;
  return cs;
}

Eigen::MatrixXd first_difference(const Eigen::MatrixXd& m) {
  if (m.cols() < 1) return m;
  return m.rightCols(m.cols() - 1) - m.leftCols(m.cols() - 1);
}

PanelDataset time_first_difference(const PanelDataset& panel) {
  if (panel.T() < 3)
    throw ValidationError(fmt::format(
        "time first-differencing needs at least 3 periods, got {}", panel.T()));
  PanelDataset out = panel;
  out.y = first_difference(panel.y);
  for (auto& [name, x] : out.covariates) x = first_difference(x);
  out.period_ids.erase(out.period_ids.begin());
  return out;
}

Eigen::MatrixXd within_transform(const Eigen::MatrixXd& m, FixedEffects fe) {
  Eigen::MatrixXd out = m;
  const bool unit = fe == FixedEffects::individual || fe == FixedEffects::both;
  const bool period = fe == FixedEffects::time || fe == FixedEffects::both;
  // Sequential demeaning equals the two-way formula on balanced panels.
  if (unit) out.colwise() -= out.rowwise().mean();
  if (period) out.rowwise() -= out.colwise().mean();
  return out;
}

PanelDataset within_transform(const PanelDataset& panel, FixedEffects fe) {
  PanelDataset out = panel;
  out.y = within_transform(panel.y, fe);
  for (auto& [name, x] : out.covariates) x = within_transform(x, fe);
  return out;
}

}  // namespace sdpd
