#include "sdpd/report.hpp"

#include "sdpd/errors.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace sdpd {
namespace {

using json = nlohmann::json;

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::optional<double> optional_from(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

double number_or_nan(const json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

json vector_json(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Eigen::VectorXd vector_from(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = number_or_nan(j[i]);
  return v;
}

std::string full(double v) {
  if (std::isnan(v)) return "NA";
  return fmt::format("{:.17g}", v);
}

}  // namespace

json to_json(const FitResult& f) {
  json j;
  j["rho"] = f.rho;
  j["phi"] = f.phi;
  j["gamma"] = f.gamma;
  j["covariates"] = f.covariate_names;
  j["beta"] = vector_json(f.beta);
  j["sigma_sq"] = f.sigma_sq;
  j["parameter_order"] = f.parameter_names();
  json vc = json::array();
  for (Eigen::Index r = 0; r < f.vcov.rows(); ++r) vc.push_back(vector_json(f.vcov.row(r).transpose()));
  j["vcov"] = vc;
  j["vcov_usable"] = f.vcov_usable;
  j["standard_errors"] = vector_json(f.standard_errors());
  j["loglik"] = f.loglik;
  j["n_obs"] = f.n_obs;
  j["n_groups"] = f.n_groups;
  j["n_years"] = f.n_years;
  j["period_ids"] = f.period_ids;
  j["pseudo_r2"] = {{"within", optional_json(f.pseudo_r2.within)},
                    {"between", optional_json(f.pseudo_r2.between)},
                    {"overall", optional_json(f.pseudo_r2.overall)}};
  const auto& fe = f.fixed_effects;
  j["fe_means"] = {{"individual_mean", fe.individual_mean},
                   {"individual_sd", fe.individual_sd},
                   {"time_mean", fe.time_mean},
                   {"time_sd", fe.time_sd},
                   {"individual", vector_json(fe.individual)},
                   {"time", vector_json(fe.time)}};
  j["convergence"] = {{"starts", f.convergence.starts},
                      {"failed_starts", f.convergence.failed_starts},
                      {"best_start", f.convergence.best_start},
                      {"iterations", f.convergence.iterations},
                      {"gradient_norm", f.convergence.gradient_norm},
                      {"status", f.convergence.status}};
  j["model"] = {{"covariates", f.spec.covariate_names},
                {"include_time_lag", f.spec.include_time_lag},
                {"include_space_time_lag", f.spec.include_space_time_lag},
                {"fixed_effects", to_string(f.spec.fixed_effects)},
                {"differencing", to_string(f.spec.differencing)},
                {"k_neighbors", f.spec.k_neighbors}};
  j["warnings"] = f.warnings;
  return j;
}

FitResult fit_from_json(const json& j) {
  FitResult f;
  try {
    f.rho = j.at("rho").get<double>();
    f.phi = j.at("phi").get<double>();
    f.gamma = j.at("gamma").get<double>();
    f.covariate_names = j.at("covariates").get<std::vector<std::string>>();
    f.beta = vector_from(j.at("beta"));
    f.sigma_sq = j.at("sigma_sq").get<double>();
    const auto& vc = j.at("vcov");
    const auto dim = static_cast<Eigen::Index>(vc.size());
    f.vcov.resize(dim, dim);
    for (Eigen::Index r = 0; r < dim; ++r) f.vcov.row(r) = vector_from(vc[r]).transpose();
    f.vcov_usable = j.value("vcov_usable", false);
    f.loglik = number_or_nan(j.at("loglik"));
    f.n_obs = j.value("n_obs", Eigen::Index{0});
    f.n_groups = j.value("n_groups", Eigen::Index{0});
    f.n_years = j.value("n_years", Eigen::Index{0});
    f.period_ids = j.value("period_ids", std::vector<int>{});
    if (j.contains("pseudo_r2")) {
      const auto& pr = j["pseudo_r2"];
      f.pseudo_r2.within = optional_from(pr.at("within"));
      f.pseudo_r2.between = optional_from(pr.at("between"));
      f.pseudo_r2.overall = optional_from(pr.at("overall"));
    }
    if (j.contains("fe_means")) {
      const auto& fe = j["fe_means"];
      f.fixed_effects.individual_mean = fe.value("individual_mean", 0.0);
      f.fixed_effects.individual_sd = fe.value("individual_sd", 0.0);
      f.fixed_effects.time_mean = fe.value("time_mean", 0.0);
      f.fixed_effects.time_sd = fe.value("time_sd", 0.0);
      if (fe.contains("individual")) f.fixed_effects.individual = vector_from(fe["individual"]);
      if (fe.contains("time")) f.fixed_effects.time = vector_from(fe["time"]);
    }
    if (j.contains("convergence")) {
      const auto& c = j["convergence"];
      f.convergence.starts = c.value("starts", 0);
      f.convergence.failed_starts = c.value("failed_starts", 0);
      f.convergence.best_start = c.value("best_start", -1);
      f.convergence.iterations = c.value("iterations", 0);
      f.convergence.gradient_norm = c.value("gradient_norm", 0.0);
      f.convergence.status = c.value("status", std::string{});
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      f.spec.covariate_names = m.value("covariates", f.covariate_names);
      f.spec.include_time_lag = m.value("include_time_lag", true);
      f.spec.include_space_time_lag = m.value("include_space_time_lag", true);
      f.spec.fixed_effects = parse_fixed_effects(m.value("fixed_effects", std::string("both")));
      f.spec.differencing = parse_differencing(m.value("differencing", std::string("none")));
      f.spec.k_neighbors = m.value("k_neighbors", 11);
    } else {
      f.spec.covariate_names = f.covariate_names;
    }
    f.warnings = j.value("warnings", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed fit document: ") + e.what());
  }
  if (f.beta.size() != static_cast<Eigen::Index>(f.covariate_names.size()))
    throw ValidationError("fit document: beta and covariate lists differ in length");
  if (f.vcov.rows() != f.beta.size() + 4)
    throw ValidationError("fit document: vcov must be (k+4) x (k+4)");
  return f;
}

void write_fit(const FitResult& fit, const std::filesystem::path& path) {
  write_text(path, to_json(fit).dump(2) + "\n");
}

FitResult read_fit(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open fit document " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("malformed fit document " + path.string() + ": " + e.what());
  }
  return fit_from_json(j);
}

std::string significance_stars(double p) {
  if (!std::isfinite(p)) return "";
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  if (p < 0.1) return "+";
  return "";
}

std::string format_sig(double v) {
  if (std::isnan(v)) return "NA";
  return fmt::format("{:.5g}", v);
}

std::string coefficient_table(const FitResult& fit, const std::string& label) {
  const auto names = fit.parameter_names();
  const auto params = fit.parameters();
  const auto se = fit.standard_errors();
  std::ostringstream out;
  out << fmt::format("{:<24}{:>20}\n", "", label);
  out << std::string(44, '-') << '\n';
  for (std::size_t j = 0; j < names.size(); ++j) {
    const auto i = static_cast<Eigen::Index>(j);
    const bool fixed = fit.vcov_usable && fit.vcov(i, i) == 0.0;
    if (fixed && (names[j] == "phi" || names[j] == "gamma" || names[j] == "rho") && params[i] == 0.0)
      continue;
    const double p = fit.vcov_usable && se[i] > 0.0 ? normal_two_sided_p(params[i] / se[i])
                                                    : std::numeric_limits<double>::quiet_NaN();
    out << fmt::format("{:<24}{:>20}\n", names[j], format_sig(params[i]) + significance_stars(p));
    out << fmt::format("{:<24}{:>20}\n", "", "(" + (fit.vcov_usable ? format_sig(se[i]) : "NA") + ")");
  }
  out << std::string(44, '-') << '\n';
  out << "Standard errors in parentheses\n";
  out << "+ p < 0.1, * p < 0.05, ** p < 0.01, *** p < 0.001\n";
  return out.str();
}

std::string ancillary_table(const FitResult& fit, const std::string& label) {
  auto opt = [](const std::optional<double>& v) { return v ? format_sig(*v) : std::string("NA"); };
  std::ostringstream out;
  out << fmt::format("{:<24}{:>20}\n", "", label);
  out << std::string(44, '-') << '\n';
  out << fmt::format("{:<24}{:>20}\n", "N. obs.", fit.n_obs);
  out << fmt::format("{:<24}{:>20}\n", "N. groups", fit.n_groups);
  out << fmt::format("{:<24}{:>20}\n", "N. years", fit.n_years);
  out << fmt::format("{:<24}{:>20}\n", "Log-Lik", format_sig(fit.loglik));
  out << fmt::format("{:<24}{:>20}\n", "Mean fixed effects", format_sig(fit.fixed_effects.individual_mean));
  out << std::string(44, '-') << '\n';
  out << "Pseudo R-squared\n";
  out << fmt::format("{:<24}{:>20}\n", "Within", opt(fit.pseudo_r2.within));
  out << fmt::format("{:<24}{:>20}\n", "Between", opt(fit.pseudo_r2.between));
  out << fmt::format("{:<24}{:>20}\n", "Overall", opt(fit.pseudo_r2.overall));
  return out.str();
}

json to_json(const StabilityReport& r) {
  return {{"sum_rpg", r.sum_rpg},       {"variance", r.variance}, {"wald_stat", r.wald_stat},
          {"p_value", r.p_value},       {"alpha", r.alpha},       {"regime", to_string(r.regime)}};
}

std::string effects_table_csv(const EffectsReport& report, const std::string& region) {
  std::string out = "region,variable,horizon,direct,indirect,total,total_direct_plus_indirect\n";
  for (const auto& row : report.table)
    out += fmt::format("{},{},{},{},{},{},{}\n", region, row.variable, to_string(row.horizon),
                       full(row.effect.direct), full(row.effect.indirect), full(row.effect.total),
                       full(row.effect.total_direct_plus_indirect()));
  return out;
}

std::string time_varying_csv(const std::vector<PeriodEffect>& series) {
  std::string out = "period,direct,indirect,total\n";
  for (const auto& p : series)
    out += fmt::format("{},{},{},{}\n", p.period, full(p.effect.direct), full(p.effect.indirect),
                       full(p.effect.total));
  return out;
}

std::string local_map_csv(const LocalEffects& local, const PanelDataset& panel) {
  std::string out = "unit_id,lon,lat,value,direct,indirect\n";
  for (Eigen::Index i = 0; i < local.row_sum.size(); ++i)
    out += fmt::format("{},{},{},{},{},{}\n", panel.unit_ids[i], full(panel.centroids[i].lon),
                       full(panel.centroids[i].lat), full(local.row_sum[i]), full(local.direct[i]),
                       full(local.indirect[i]));
  return out;
}

std::string lagged_effects_csv(const std::vector<LaggedEffect>& series) {
  std::string out = "period,mean\n";
  for (const auto& p : series) out += fmt::format("{},{}\n", p.period, full(p.mean));
  return out;
}

std::string lagged_effects_units_csv(const std::vector<LaggedEffect>& series,
                                     const PanelDataset& panel) {
  std::string out = "unit_id,period,value\n";
  for (const auto& p : series)
    for (Eigen::Index i = 0; i < p.per_unit.size(); ++i)
      out += fmt::format("{},{},{}\n", panel.unit_ids[i], p.period, full(p.per_unit[i]));
  return out;
}

std::string monte_carlo_parameters_csv(const MonteCarloSummary& s) {
  std::string out = "parameter,truth,mean,mean_bias,rmse,sd,mc_se\n";
  for (const auto& p : s.parameters)
    out += fmt::format("{},{},{},{},{},{},{}\n", p.name, full(p.truth), full(p.mean),
                       full(p.mean_bias), full(p.rmse), full(p.sd), full(p.mc_se));
  return out;
}

std::string monte_carlo_overview_csv(const MonteCarloSummary& s) {
  std::string out =
      "experiment,requested,succeeded,failed,rejection_rate,rejection_se,max_identity_error\n";
  out += fmt::format("{},{},{},{},{},{},{}\n", to_string(s.experiment), s.requested, s.succeeded,
                     s.failed, full(s.rejection_rate), full(s.rejection_se),
                     full(s.max_identity_error));
  return out;
}

std::string content_hash(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  out << text;
}

}  // namespace sdpd
