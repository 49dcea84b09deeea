// sdpd: fit, effects, test, simulate and validate subcommands over a JSON run
// config. Every run writes manifest.<command>.json into the output directory; failures
// also write error.json.

#include "sdpd/dgp.hpp"
#include "sdpd/effects.hpp"
#include "sdpd/errors.hpp"
#include "sdpd/estimator.hpp"
#include "sdpd/panel_io.hpp"
#include "sdpd/report.hpp"
#include "sdpd/version.hpp"
#include "sdpd/weights.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace sdpd;

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  int threads = 1;
  std::string fit_path;
};

// Loaded config with relative paths resolved against the config file.
struct RunConfig {
  json doc;
  std::uint64_t seed = 1;
};

std::string resolve_path(const json& doc, const char* key, const fs::path& base) {
  if (!doc.contains(key) || doc[key].is_null()) return {};
  fs::path p = doc[key].get<std::string>();
  if (p.is_relative()) p = base / p;
  return fs::weakly_canonical(p).string();
}

RunConfig load_config(const Options& opt) {
  if (opt.config_path.empty()) throw ValidationError("--config is required");
  std::ifstream in(opt.config_path);
  if (!in) throw ValidationError("cannot open config " + opt.config_path);
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ValidationError("malformed config " + opt.config_path + ": " + e.what());
  }
  if (!doc.is_object()) throw ValidationError("config must be a JSON object");
  // A manifest from a previous run carries its resolved config.
  if (doc.contains("tool") && doc.contains("config")) doc = doc["config"];
  const fs::path base = fs::absolute(fs::path(opt.config_path)).parent_path();
  for (const char* key : {"data", "schema", "fit"}) {
    const auto p = resolve_path(doc, key, base);
    if (!p.empty()) doc[key] = p;
  }
  RunConfig rc;
  try {
    rc.seed = doc.value("seed", std::uint64_t{1});
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config seed: ") + e.what());
  }
  if (opt.seed) rc.seed = *opt.seed;
  doc["seed"] = rc.seed;
  rc.doc = doc;
  return rc;
}

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j[key].is_null()) return fallback;
  try {
    return j[key].get<T>();
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("config field '{}': {}", key, e.what()));
  }
}

ModelSpec model_spec(const json& doc) {
  ModelSpec spec;
  const json m = doc.value("model", json::object());
  spec.covariate_names = get_or(m, "covariates", std::vector<std::string>{});
  spec.include_time_lag = get_or(m, "time_lag", true);
  spec.include_space_time_lag = get_or(m, "space_time_lag", true);
  spec.fixed_effects = parse_fixed_effects(get_or(m, "fixed_effects", std::string("both")));
  spec.differencing = parse_differencing(get_or(m, "differencing", std::string("none")));
  spec.k_neighbors = get_or(m, "k_neighbors", 11);
  return spec;
}

KnnOptions knn_options(const json& doc) {
  KnnOptions o;
  const json m = doc.value("model", json::object());
  if (get_or(m, "great_circle", false)) o.metric = DistanceMetric::great_circle;
  o.allow_duplicate_centroids = get_or(m, "allow_duplicate_centroids", false);
  return o;
}

PanelDataset load_panel(const json& doc) {
  const auto data = get_or(doc, "data", std::string{});
  const auto schema_path = get_or(doc, "schema", std::string{});
  if (data.empty()) throw ValidationError("config: 'data' is required");
  if (schema_path.empty()) throw ValidationError("config: 'schema' is required");
  if (!fs::exists(data)) throw ValidationError("data file not found: " + data);
  if (!fs::exists(schema_path)) throw ValidationError("schema file not found: " + schema_path);
  auto panel = read_panel(fs::path(data), read_schema(schema_path));
  // Optional regional subset by country label.
  const auto countries = get_or(doc, "countries", std::vector<std::string>{});
  if (!countries.empty()) {
    const std::set<std::string> keep(countries.begin(), countries.end());
    std::vector<Eigen::Index> units;
    for (Eigen::Index i = 0; i < panel.n(); ++i)
      if (keep.count(panel.country_of_unit[i])) units.push_back(i);
    if (units.empty()) throw ValidationError("country filter selects no units");
    panel = panel.select_units(units);
  }
  return panel;
}

struct Outputs {
  fs::path dir;
  std::map<std::string, std::string> hashes;

  void write(const std::string& name, const std::string& text) {
    write_text(dir / name, text);
    hashes[name] = content_hash(text);
  }
};

void write_manifest(Outputs& out, const std::string& command, const RunConfig& rc) {
  json m;
  m["tool"] = "sdpd";
  m["version"] = kVersion;
  m["command"] = command;
  m["seed"] = rc.seed;
  m["config_hash"] = content_hash(rc.doc.dump());
  m["config"] = rc.doc;
  m["outputs"] = out.hashes;
  write_text(out.dir / ("manifest." + command + ".json"), m.dump(2) + "\n");
}

std::string region_label(const json& doc) { return get_or(doc, "region", std::string("all")); }

FitOptions fit_options(const json& doc, std::uint64_t seed) {
  FitOptions fo;
  const json f = doc.value("estimation", json::object());
  fo.starts = get_or(f, "starts", fo.starts);
  fo.gradient_tolerance = get_or(f, "gradient_tolerance", fo.gradient_tolerance);
  fo.max_iterations = get_or(f, "max_iterations", fo.max_iterations);
  fo.start_seed = seed;
  return fo;
}

void cmd_validate(const RunConfig& rc, Outputs& out) {
  const auto panel = load_panel(rc.doc);
  const auto spec = model_spec(rc.doc);
  spec.validate(panel);
  const auto w = build_knn_weights(panel.centroids, spec.k_neighbors, knn_options(rc.doc));
  const auto design = build_design(panel, w, spec);
  json v;
  v["n"] = panel.n();
  v["T"] = panel.T();
  v["usable_periods"] = design.periods;
  v["k_neighbors"] = spec.k_neighbors;
  v["covariates"] = spec.covariate_names;
  v["available"] = json::array();
  for (const auto& [name, m] : panel.covariates) v["available"].push_back(name);
  v["max_row_sum_error"] = w.max_row_sum_error();
  out.write("validation.json", v.dump(2) + "\n");
  std::cout << fmt::format("valid: n={} T={} usable periods={}\n", panel.n(), panel.T(), design.periods);
}

void cmd_fit(const RunConfig& rc, Outputs& out) {
  const auto panel = load_panel(rc.doc);
  const auto spec = model_spec(rc.doc);
  spec.validate(panel);
  const auto w = build_knn_weights(panel.centroids, spec.k_neighbors, knn_options(rc.doc));
  const auto result = fit(panel, w, spec, fit_options(rc.doc, rc.seed));
  const auto label = region_label(rc.doc);
  out.write("fit.json", to_json(result).dump(2) + "\n");
  const auto coef = coefficient_table(result, label);
  const auto anc = ancillary_table(result, label);
  out.write("coefficients.txt", coef);
  out.write("ancillary.txt", anc);
  if (get_or(rc.doc, "export_weights", false)) {
    write_weights(w, out.dir / "weights.csv");
    std::ifstream in(out.dir / "weights.csv", std::ios::binary);
    out.hashes["weights.csv"] = content_hash(std::string(std::istreambuf_iterator<char>(in), {}));
  }
  std::cout << coef << '\n' << anc;
  for (const auto& wmsg : result.warnings) std::cerr << "warning: " << wmsg << '\n';
}

std::string fit_path_for(const RunConfig& rc, const Options& opt, const Outputs& out) {
  if (!opt.fit_path.empty()) return opt.fit_path;
  const auto p = get_or(rc.doc, "fit", std::string{});
  if (!p.empty()) return p;
  return (out.dir / "fit.json").string();
}

std::string file_key(const std::string& s) {
  std::string k;
  for (char c : s) k += (std::isalnum(static_cast<unsigned char>(c)) || c == '_') ? c : '_';
  return k;
}

void cmd_effects(const RunConfig& rc, const Options& opt, Outputs& out) {
  const auto result = read_fit(fit_path_for(rc, opt, out));
  const auto panel = load_panel(rc.doc);
  const auto w = build_knn_weights(panel.centroids, result.spec.k_neighbors, knn_options(rc.doc));
  auto covariates = get_or(rc.doc.value("effects", json::object()), "covariates",
                           std::vector<std::string>{});
  if (covariates.empty()) covariates = contemporaneous_covariates(result, panel);
  const auto rep = compute_effects(result, w, panel, covariates);
  const auto region = region_label(rc.doc);
  const auto key = file_key(region);

  out.write("effects_table.csv", effects_table_csv(rep, region));
  for (const auto& tv : rep.time_varying)
    out.write(fmt::format("time_varying_{}_{}_{}.csv", key, file_key(tv.variable), to_string(tv.horizon)),
              time_varying_csv(tv.series));
  for (const auto& lm : rep.local)
    out.write(fmt::format("local_{}_{}_{}.csv", key, file_key(lm.variable), to_string(lm.horizon)),
              local_map_csv(lm.values, panel));
  if (rep.ecm_convergence) {
    const auto& e = *rep.ecm_convergence;
    out.write("ecm_convergence.csv",
              fmt::format("region,direct,indirect,total,total_direct_plus_indirect\n{},{:.17g},{:.17g},{:.17g},{:.17g}\n",
                          region, e.direct, e.indirect, e.total, e.total_direct_plus_indirect()));
  }
  for (const auto& [cov, series] : rep.ecm_lagged) {
    out.write(fmt::format("ecm_lagged_{}_{}.csv", key, file_key(cov)), lagged_effects_csv(series));
    out.write(fmt::format("ecm_lagged_{}_{}_units.csv", key, file_key(cov)),
              lagged_effects_units_csv(series, panel));
  }
  std::string skipped = "item,reason\n";
  for (const auto& s : rep.skipped) skipped += fmt::format("\"{}\",\"{}\"\n", s.item, s.reason);
  out.write("skipped.csv", skipped);
  out.write("effects_note.txt",
            "Point estimates only; standard errors for effects are not computed.\n");
  std::cout << effects_table_csv(rep, region);
  for (const auto& s : rep.skipped) std::cerr << "skipped: " << s.item << ": " << s.reason << '\n';
}

void cmd_test(const RunConfig& rc, const Options& opt, Outputs& out) {
  const auto result = read_fit(fit_path_for(rc, opt, out));
  if (!result.vcov_usable) throw EstimationError("fit has no usable covariance matrix");
  const double alpha = get_or(rc.doc, "alpha", 0.05);
  const auto rep = wald_cointegration_test(result, alpha);
  out.write("stability.json", to_json(rep).dump(2) + "\n");
  std::cout << fmt::format("rho+phi+gamma = {:.6g}  W = {:.6g}  p = {:.6g}  regime = {}\n",
                           rep.sum_rpg, rep.wald_stat, rep.p_value, to_string(rep.regime));
}

DGPConfig dgp_config(const json& s, std::uint64_t seed) {
  const json d = s.value("dgp", json::object());
  DGPConfig c;
  c.n = get_or(d, "n", c.n);
  c.T = get_or(d, "T", c.T);
  c.burn_in = get_or(d, "burn_in", c.burn_in);
  c.rho = get_or(d, "rho", c.rho);
  c.phi = get_or(d, "phi", c.phi);
  c.gamma = get_or(d, "gamma", c.gamma);
  c.beta = get_or(d, "beta", c.beta);
  c.sigma = get_or(d, "sigma", c.sigma);
  c.fe_individual_scale = get_or(d, "fe_individual_scale", c.fe_individual_scale);
  c.fe_time_scale = get_or(d, "fe_time_scale", c.fe_time_scale);
  c.covariate_generator =
      parse_covariate_generator(get_or(d, "generator", to_string(c.covariate_generator)));
  c.block_size = get_or(d, "block_size", c.block_size);
  c.k_neighbors = get_or(d, "k_neighbors", c.k_neighbors);
  c.y0 = get_or(d, "y0", c.y0);
  c.regime = parse_regime_request(get_or(d, "regime", to_string(c.regime)));
  c.seed = seed;
  c.validate();
  return c;
}

void cmd_simulate(const RunConfig& rc, const Options& opt, Outputs& out) {
  const json s = rc.doc.value("simulate", json::object());
  const auto cfg = dgp_config(s, rc.seed);
  const auto w = grid_weights(cfg);
  const auto panel = simulate(cfg, w);

  write_panel(panel, out.dir / "panel.csv");
  PanelSchema schema;
  schema.dependent = panel.dependent_name;
  schema.covariates = cfg.covariate_names();
  write_schema(schema, out.dir / "schema.json");
  for (const char* name : {"panel.csv", "schema.json"}) {
    std::ifstream in(out.dir / name, std::ios::binary);
    out.hashes[name] = content_hash(std::string(std::istreambuf_iterator<char>(in), {}));
  }

  const int reps = get_or(s, "replications", 0);
  if (reps > 0) {
    MonteCarloOptions mo;
    mo.replications = reps;
    mo.experiment = parse_experiment(get_or(s, "experiment", std::string("bias")));
    mo.threads = opt.threads;
    mo.alpha = get_or(s, "alpha", 0.05);
    mo.spec = model_spec(rc.doc);
    if (!rc.doc.contains("model") || !rc.doc["model"].contains("covariates"))
      mo.spec.covariate_names.clear();
    mo.fit = fit_options(rc.doc, rc.seed);
    const auto summary = monte_carlo(cfg, mo);
    out.write("mc_parameters.csv", monte_carlo_parameters_csv(summary));
    out.write("mc_overview.csv", monte_carlo_overview_csv(summary));
    std::string failures;
    for (const auto& f : summary.failures) failures += f + "\n";
    out.write("mc_failures.txt", failures);
    std::cout << monte_carlo_overview_csv(summary) << monte_carlo_parameters_csv(summary);
    std::cerr << fmt::format("{} replications in {:.1f} s\n", reps, summary.seconds);
  } else {
    std::cout << fmt::format("simulated panel n={} T={}\n", panel.n(), panel.T());
  }
}

void write_error(const fs::path& dir, const std::string& kind, const std::string& message, int code) {
  if (dir.empty()) return;
  std::error_code ec;
  fs::create_directories(dir, ec);
  json e{{"error", kind}, {"message", message}, {"exit_code", code}};
  std::ofstream(dir / "error.json") << e.dump(2) << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial dynamic panel estimation, testing, effects and simulation"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1, 1);
  Options opt;
  std::uint64_t seed_value = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "Run config (JSON) or a previous manifest")->required();
    sub->add_option("--out", opt.out_dir, "Output directory")->required();
    sub->add_option("--seed", seed_value, "Overrides the config seed");
    sub->add_option("--threads", opt.threads, "Worker threads for Monte Carlo")->check(CLI::PositiveNumber);
  };
  auto* fit_cmd = app.add_subcommand("fit", "Estimate the model and write fit.json and tables");
  auto* eff_cmd = app.add_subcommand("effects", "Marginal effects from a saved fit");
  auto* test_cmd = app.add_subcommand("test", "Wald test for spatial cointegration");
  auto* sim_cmd = app.add_subcommand("simulate", "Simulate a panel and run Monte Carlo experiments");
  auto* val_cmd = app.add_subcommand("validate", "Check config, data and model spec");
  for (auto* s : {fit_cmd, eff_cmd, test_cmd, sim_cmd, val_cmd}) add_common(s);
  for (auto* s : {eff_cmd, test_cmd})
    s->add_option("--fit", opt.fit_path, "Saved fit (default: config 'fit' or <out>/fit.json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  opt.command = app.get_subcommands().front()->get_name();
  if (app.get_subcommands().front()->count("--seed") > 0) opt.seed = seed_value;

  Outputs out;
  out.dir = opt.out_dir;
  try {
    fs::create_directories(out.dir);
    const auto rc = load_config(opt);
    if (opt.command == "fit") cmd_fit(rc, out);
    else if (opt.command == "effects") cmd_effects(rc, opt, out);
    else if (opt.command == "test") cmd_test(rc, opt, out);
    else if (opt.command == "simulate") cmd_simulate(rc, opt, out);
    else cmd_validate(rc, out);
    write_manifest(out, opt.command, rc);
    return 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    write_error(out.dir, "validation", e.what(), 2);
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    write_error(out.dir, "validation", e.what(), 2);
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    write_error(out.dir, "runtime", e.what(), 1);
    return 1;
  }
}
