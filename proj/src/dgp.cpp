#include "sdpd/dgp.hpp"

#include "sdpd/effects.hpp"
#include "sdpd/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <random>
#include <thread>

namespace sdpd {

std::string to_string(CovariateGenerator g) {
  switch (g) {
    case CovariateGenerator::iid_normal: return "iid-normal";
    case CovariateGenerator::truncated_pair: return "truncated-pair";
    case CovariateGenerator::country_block: return "country-block";
  }
  return "?";
}

CovariateGenerator parse_covariate_generator(const std::string& s) {
  if (s == "iid-normal" || s == "iid_normal") return CovariateGenerator::iid_normal;
  if (s == "truncated-pair" || s == "truncated_pair") return CovariateGenerator::truncated_pair;
  if (s == "country-block" || s == "country_block") return CovariateGenerator::country_block;
  throw ValidationError("unknown covariate generator '" + s + "'");
}

std::string to_string(RegimeRequest r) {
  switch (r) {
    case RegimeRequest::any: return "any";
    case RegimeRequest::stable: return "stable";
    case RegimeRequest::cointegrated: return "cointegrated";
  }
  return "?";
}

RegimeRequest parse_regime_request(const std::string& s) {
  if (s == "any") return RegimeRequest::any;
  if (s == "stable") return RegimeRequest::stable;
  if (s == "cointegrated") return RegimeRequest::cointegrated;
  throw ValidationError("unknown regime '" + s + "' (any|stable|cointegrated)");
}

std::string to_string(Experiment e) {
  switch (e) {
    case Experiment::bias: return "bias";
    case Experiment::wald_size: return "wald_size";
    case Experiment::wald_power: return "wald_power";
    case Experiment::effect_identity: return "effect_identity";
  }
  return "?";
}

Experiment parse_experiment(const std::string& s) {
  if (s == "bias") return Experiment::bias;
  if (s == "wald_size") return Experiment::wald_size;
  if (s == "wald_power") return Experiment::wald_power;
  if (s == "effect_identity") return Experiment::effect_identity;
  throw ValidationError("unknown experiment '" + s +
                        "' (bias|wald_size|wald_power|effect_identity)");
}

void DGPConfig::validate() const {
  if (n < 2) throw ValidationError("DGP needs n >= 2");
  if (T < 1) throw ValidationError("DGP needs T >= 1");
  if (burn_in < 0) throw ValidationError("burn_in must be non-negative");
  if (!(sigma >= 0.0)) throw ValidationError("sigma must be non-negative");
  if (fe_individual_scale < 0.0 || fe_time_scale < 0.0)
    throw ValidationError("fixed-effect scales must be non-negative");
  if (k_neighbors < 1 || k_neighbors >= n)
    throw ValidationError(fmt::format("k_neighbors = {} must lie in [1, n) with n = {}", k_neighbors, n));
  if (!(std::abs(rho) < 1.0)) throw ValidationError("|rho| must be below 1");
  const double sum = rho + phi + gamma;
  if (regime == RegimeRequest::stable && !(sum < 1.0))
    throw ValidationError(fmt::format(
        "stable regime requested but rho + phi + gamma = {:.6g} >= 1", sum));
  if (regime == RegimeRequest::cointegrated && std::abs(sum - 1.0) > 1e-12)
    throw ValidationError(fmt::format(
        "cointegrated regime requested but rho + phi + gamma = {:.6g} != 1", sum));
}

std::vector<std::string> DGPConfig::covariate_names() const {
  std::vector<std::string> names;
  for (std::size_t h = 0; h < beta.size(); ++h) names.push_back(fmt::format("x{}", h + 1));
  return names;
}

std::vector<Coordinate> grid_centroids(Eigen::Index n) {
  const auto side = static_cast<Eigen::Index>(std::ceil(std::sqrt(static_cast<double>(n)) - 1e-9));
  std::vector<Coordinate> c;
  c.reserve(n);
  for (Eigen::Index i = 0; i < n; ++i)
    c.push_back({static_cast<double>(i % side), static_cast<double>(i / side)});
  return c;
}

SpatialWeights grid_weights(const DGPConfig& config) {
  const auto c = grid_centroids(config.n);
  return build_knn_weights(c, config.k_neighbors);
}

PanelDataset simulate(const DGPConfig& config) {
  config.validate();
  return simulate(config, grid_weights(config));
}

PanelDataset simulate(const DGPConfig& config, const SpatialWeights& w) {
  config.validate();
  if (w.n() != config.n) throw ValidationError("weights dimension does not match DGP n");
  const auto n = config.n;
  const auto total = config.T + config.burn_in;
  const auto k = static_cast<Eigen::Index>(config.beta.size());
  const Eigen::Index block =
      config.block_size > 0
          ? config.block_size
          : static_cast<Eigen::Index>(std::ceil(std::sqrt(static_cast<double>(n)) - 1e-9));

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::VectorXd alpha(n);
  for (Eigen::Index i = 0; i < n; ++i) alpha[i] = config.fe_individual_scale * normal(rng);

  const Resolvent s(w, config.rho);
  std::vector<Eigen::MatrixXd> x(k, Eigen::MatrixXd(n, config.T));
  Eigen::MatrixXd y(n, config.T);
  Eigen::VectorXd prev = Eigen::VectorXd::Constant(n, config.y0);
  Eigen::VectorXd xt(n);
  const Eigen::Index blocks = (n + block - 1) / block;
  Eigen::VectorXd block_draw(blocks);

  for (Eigen::Index t = 0; t < total; ++t) {
    const double xi = config.fe_time_scale * normal(rng);
    Eigen::VectorXd rhs = config.phi * prev + config.gamma * w.lag(prev);
    rhs += alpha;
    rhs.array() += xi;
    for (Eigen::Index h = 0; h < k; ++h) {
      const bool paired = config.covariate_generator == CovariateGenerator::truncated_pair &&
                          h % 2 == 0 && h + 1 < k;
      if (paired) {
        Eigen::VectorXd other(n);
        for (Eigen::Index i = 0; i < n; ++i) {
          const double spei = normal(rng);
          xt[i] = std::max(-spei, 0.0);
          other[i] = std::max(spei, 0.0);
        }
        rhs += config.beta[h] * xt + config.beta[h + 1] * other;
        if (t >= config.burn_in) {
          x[h].col(t - config.burn_in) = xt;
          x[h + 1].col(t - config.burn_in) = other;
        }
        ++h;
        continue;
      }
      if (config.covariate_generator == CovariateGenerator::country_block) {
        for (Eigen::Index b = 0; b < blocks; ++b) block_draw[b] = normal(rng);
        for (Eigen::Index i = 0; i < n; ++i) xt[i] = block_draw[i / block];
      } else {
        for (Eigen::Index i = 0; i < n; ++i) xt[i] = normal(rng);
      }
      rhs += config.beta[h] * xt;
      if (t >= config.burn_in) x[h].col(t - config.burn_in) = xt;
    }
    if (config.sigma > 0.0)
      for (Eigen::Index i = 0; i < n; ++i) rhs[i] += config.sigma * normal(rng);
    prev = s.solve(rhs);
    if (t >= config.burn_in) y.col(t - config.burn_in) = prev;
  }

  PanelDataset p;
  p.y = std::move(y);
  const auto names = config.covariate_names();
  for (Eigen::Index h = 0; h < k; ++h) p.covariates.emplace(names[h], std::move(x[h]));
  p.centroids = grid_centroids(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    p.unit_ids.push_back(fmt::format("u{:05d}", i));
    p.country_of_unit.push_back(fmt::format("c{:03d}", i / block));
  }
  for (Eigen::Index t = 0; t < config.T; ++t) p.period_ids.push_back(static_cast<int>(t + 1));
  p.dependent_name = "y";
  return p;
}

std::uint64_t replication_seed(std::uint64_t seed, int replication) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed & 0xffffffffu),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replication)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

namespace {

// Order-independent sum.
double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

ReplicationOutcome run_replication(const DGPConfig& base, const MonteCarloOptions& options,
                                   const ModelSpec& spec, const SpatialWeights& w, int r) {
  ReplicationOutcome out;
  try {
    DGPConfig cfg = base;
    cfg.seed = replication_seed(base.seed, r);
    const auto panel = simulate(cfg, w);
    const auto f = fit(panel, w, spec, options.fit);
    out.estimates = f.parameters();
    if (options.experiment == Experiment::wald_size || options.experiment == Experiment::wald_power) {
      const auto rep = wald_cointegration_test(f, options.alpha);
      out.wald_p = rep.p_value;
      out.rejected = rep.p_value < options.alpha;
    }
    if (options.experiment == Experiment::effect_identity) {
      double err = 0.0;
      for (const auto& name : f.covariate_names) {
        const double b = f.coefficient(name);
        const auto st = short_term_effects(f, w, name);
        err = std::max(err, std::abs(st.total - b / (1.0 - f.rho)));
        const auto lt = long_term_effects(f, w, name);
        err = std::max(err, std::abs(lt.total - b / (1.0 - f.phi - f.rho - f.gamma)));
      }
      out.identity_error = err;
    }
    out.ok = true;
  } catch (const std::exception& e) {
    out.ok = false;
    out.error = e.what();
  }
  return out;
}

}  // namespace

MonteCarloSummary summarize_replications(const DGPConfig& config, Experiment experiment,
                                         const std::vector<ReplicationOutcome>& outcomes) {
  MonteCarloSummary s;
  s.experiment = experiment;
  s.requested = static_cast<int>(outcomes.size());
  std::vector<const ReplicationOutcome*> good;
  for (std::size_t r = 0; r < outcomes.size(); ++r) {
    if (outcomes[r].ok)
      good.push_back(&outcomes[r]);
    else
      s.failures.push_back(fmt::format("rep {}: {}", r, outcomes[r].error));
  }
  s.succeeded = static_cast<int>(good.size());
  s.failed = s.requested - s.succeeded;
  if (good.empty()) return s;

  std::vector<std::string> names = {"rho", "phi", "gamma"};
  for (const auto& c : config.covariate_names()) names.push_back(c);
  names.push_back("sigma_sq");
  std::vector<double> truth = {config.rho, config.phi, config.gamma};
  truth.insert(truth.end(), config.beta.begin(), config.beta.end());
  truth.push_back(config.sigma * config.sigma);

  const double count = static_cast<double>(good.size());
  for (std::size_t j = 0; j < names.size(); ++j) {
    std::vector<double> vals, sq_err;
    for (const auto* o : good) {
      if (static_cast<Eigen::Index>(j) >= o->estimates.size()) continue;
      vals.push_back(o->estimates[static_cast<Eigen::Index>(j)]);
    }
    if (vals.size() != good.size()) continue;
    ParameterSummary p;
    p.name = names[j];
    p.truth = truth[j];
    p.mean = sorted_sum(vals) / count;
    p.mean_bias = p.mean - p.truth;
    std::vector<double> dev2;
    for (double v : vals) {
      sq_err.push_back((v - p.truth) * (v - p.truth));
      dev2.push_back((v - p.mean) * (v - p.mean));
    }
    p.rmse = std::sqrt(sorted_sum(sq_err) / count);
    p.sd = good.size() > 1 ? std::sqrt(sorted_sum(dev2) / (count - 1.0)) : 0.0;
    p.mc_se = p.sd / std::sqrt(count);
    s.parameters.push_back(p);
  }
  int rejections = 0;
  for (const auto* o : good) {
    rejections += o->rejected ? 1 : 0;
    s.max_identity_error = std::max(s.max_identity_error, o->identity_error);
  }
  s.rejection_rate = rejections / count;
  s.rejection_se = std::sqrt(s.rejection_rate * (1.0 - s.rejection_rate) / count);
  return s;
}

MonteCarloSummary monte_carlo(const DGPConfig& config, const MonteCarloOptions& options) {
  config.validate();
  if (options.replications < 1) throw ValidationError("replications must be at least 1");
  const auto started = std::chrono::steady_clock::now();

  ModelSpec spec = options.spec;
  if (spec.covariate_names.empty()) spec.covariate_names = config.covariate_names();
  spec.k_neighbors = config.k_neighbors;

  const auto w = grid_weights(config);
  FitOptions fo = options.fit;
  std::optional<WeightsSpectrum> spectrum;
  if (!fo.spectrum && fo.logdet != LogDetMethod::sparse_lu && w.n() <= 2000) {
    spectrum.emplace(w);
    fo.spectrum = &*spectrum;
  }
  MonteCarloOptions opts = options;
  opts.fit = fo;

  std::vector<ReplicationOutcome> outcomes(options.replications);
  std::atomic<int> next{0};
  auto worker = [&] {
    for (int r = next++; r < options.replications; r = next++)
      outcomes[r] = run_replication(config, opts, spec, w, r);
  };
  const int threads = std::clamp(options.threads, 1, options.replications);
  std::vector<std::jthread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  pool.clear();

  auto summary = summarize_replications(config, options.experiment, outcomes);
  summary.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return summary;
}

}  // namespace sdpd
