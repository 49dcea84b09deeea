#pragma once

#include "sdpd/dgp.hpp"
#include "sdpd/effects.hpp"
#include "sdpd/estimator.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>

namespace sdpd {

// Structured text form of a fit. Doubles are written with round-trip
// precision; undefined pseudo R2 values are null.
nlohmann::json to_json(const FitResult& fit);
FitResult fit_from_json(const nlohmann::json& j);

void write_fit(const FitResult& fit, const std::filesystem::path& path);
FitResult read_fit(const std::filesystem::path& path);

// "+" p < 0.1, "*" p < 0.05, "**" p < 0.01, "***" p < 0.001.
std::string significance_stars(double p_value);

// 5 significant digits.
std::string format_sig(double v);

// Coefficient table: one row per parameter with its standard error in
// parentheses underneath, followed by the significance legend.
std::string coefficient_table(const FitResult& fit, const std::string& column_label);

// N. obs., groups, years, log-likelihood, mean fixed effects and the three
// pseudo R2 values.
std::string ancillary_table(const FitResult& fit, const std::string& column_label);

nlohmann::json to_json(const StabilityReport& report);

// Header: region,variable,horizon,direct,indirect,total,total_direct_plus_indirect
std::string effects_table_csv(const EffectsReport& report, const std::string& region);
// Header: period,direct,indirect,total
std::string time_varying_csv(const std::vector<PeriodEffect>& series);
// Header: unit_id,lon,lat,value,direct,indirect
std::string local_map_csv(const LocalEffects& local, const PanelDataset& panel);
// Header: period,mean   (cross-sectional mean of the diagonal)
std::string lagged_effects_csv(const std::vector<LaggedEffect>& series);
// Header: unit_id,period,value
std::string lagged_effects_units_csv(const std::vector<LaggedEffect>& series,
                                     const PanelDataset& panel);

// Header: parameter,truth,mean,mean_bias,rmse,sd,mc_se
std::string monte_carlo_parameters_csv(const MonteCarloSummary& s);
// Header: experiment,requested,succeeded,failed,rejection_rate,rejection_se,max_identity_error
std::string monte_carlo_overview_csv(const MonteCarloSummary& s);

// FNV-1a 64-bit, hex encoded.
std::string content_hash(const std::string& bytes);

void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace sdpd
