#include "sdpd/estimator.hpp"

#include "sdpd/errors.hpp"
#include "sdpd/optimize.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <random>

namespace sdpd {
namespace {

bool has_individual(FixedEffects fe) {
  return fe == FixedEffects::individual || fe == FixedEffects::both;
}
bool has_time(FixedEffects fe) { return fe == FixedEffects::time || fe == FixedEffects::both; }

Eigen::Map<const Eigen::VectorXd> flat(const Eigen::MatrixXd& m) {
  return {m.data(), m.size()};
}

std::optional<double> squared_correlation(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  if (a.size() < 2) return std::nullopt;
  const Eigen::VectorXd ac = a.array() - a.mean();
  const Eigen::VectorXd bc = b.array() - b.mean();
  const double saa = ac.squaredNorm();
  const double sbb = bc.squaredNorm();
  // Zero variance relative to the data scale.
  const double scale_a = std::max(1.0, a.squaredNorm());
  const double scale_b = std::max(1.0, b.squaredNorm());
  if (saa <= 1e-24 * scale_a || sbb <= 1e-24 * scale_b) return std::nullopt;
  const double r = ac.dot(bc) / std::sqrt(saa * sbb);
  return std::clamp(r * r, 0.0, 1.0);
}

constexpr Eigen::Index kEigenPathMaxN = 2000;

}  // namespace

// --- design ----------------------------------------------------------------

double EstimationDesign::effective_units() const {
  return static_cast<double>(n) - (has_time(fixed_effects) ? 1.0 : 0.0);
}

double EstimationDesign::effective_periods() const {
  return static_cast<double>(periods) - (has_individual(fixed_effects) ? 1.0 : 0.0);
}

EstimationDesign build_design(const PanelDataset& panel, const SpatialWeights& w,
                              const ModelSpec& spec) {
  if (w.n() != panel.n())
    throw ValidationError(fmt::format("weights dimension {} does not match {} units", w.n(), panel.n()));
  if (has_time(spec.fixed_effects) && w.max_row_sum_error() > 1e-10)
    throw ValidationError("time fixed effects require a row-stochastic weight matrix");

  EstimationDesign d;
  d.n = panel.n();
  d.fixed_effects = spec.fixed_effects;
  d.time_lag = spec.include_time_lag;
  d.space_time_lag = spec.include_space_time_lag;
  d.names = spec.covariate_names;
  for (const auto& name : spec.covariate_names) d.terms.push_back(parse_term(name, panel));

  Eigen::MatrixXd y = panel.y;
  std::vector<Eigen::MatrixXd> xs;
  for (const auto& t : d.terms) xs.push_back(evaluate_term(t, panel));
  std::vector<int> periods = panel.period_ids;
  if (periods.empty())
    for (Eigen::Index t = 0; t < panel.T(); ++t) periods.push_back(static_cast<int>(t));

  if (spec.differencing == Differencing::time_first_difference) {
    if (panel.T() < 3)
      throw ValidationError(fmt::format(
          "time first-differencing needs at least 3 periods, got {}", panel.T()));
    y = first_difference(y);
    for (auto& x : xs) x = first_difference(x);
    periods.erase(periods.begin());
  }

  const Eigen::Index t_all = y.cols();
  const bool need_lag = d.time_lag || d.space_time_lag;
  Eigen::Index start = need_lag ? 1 : 0;
  for (std::size_t h = 0; h < xs.size(); ++h) {
    Eigen::Index first = t_all;
    for (Eigen::Index c = t_all - 1; c >= 0 && xs[h].col(c).allFinite(); --c) first = c;
    start = std::max(start, first);
  }
  const Eigen::Index t_star = t_all - start;
  if (t_star < 2)
    throw ValidationError(fmt::format(
        "only {} usable period(s) after differencing and lagging; at least 2 are required",
        std::max<Eigen::Index>(t_star, 0)));
  for (std::size_t h = 0; h < xs.size(); ++h)
    if (!xs[h].rightCols(t_star).allFinite())
      throw ValidationError("covariate '" + d.names[h] + "' has gaps inside the estimation sample");

  d.periods = t_star;
  d.period_ids.assign(periods.end() - t_star, periods.end());
  d.raw_y = y.rightCols(t_star);
  d.raw_y_lag = need_lag ? Eigen::MatrixXd(y.middleCols(start - 1, t_star))
                         : Eigen::MatrixXd::Zero(d.n, t_star);
  d.raw_wy = w.lag(d.raw_y);
  d.raw_wy_lag = w.lag(d.raw_y_lag);
  if (!d.time_lag) d.raw_y_lag.setZero();
  if (!d.space_time_lag) d.raw_wy_lag.setZero();
  for (auto& x : xs) d.raw_x.push_back(x.rightCols(t_star));

  d.y = within_transform(d.raw_y, d.fixed_effects);
  d.wy = within_transform(d.raw_wy, d.fixed_effects);
  d.y_lag = within_transform(d.raw_y_lag, d.fixed_effects);
  d.wy_lag = within_transform(d.raw_wy_lag, d.fixed_effects);
  for (const auto& x : d.raw_x) d.x.push_back(within_transform(x, d.fixed_effects));
  return d;
}

// --- likelihood --------------------------------------------------------------

QuasiLikelihood::QuasiLikelihood(const EstimationDesign& design, const SpatialWeights& w,
                                 LogDetMethod method, const WeightsSpectrum* spectrum)
    : design_(&design), w_(&w) {
  k_ = static_cast<Eigen::Index>(design.x.size());
  n_eff_ = design.effective_obs();
  m_eff_ = design.effective_periods();
  time_effects_ = has_time(design.fixed_effects);
  if (n_eff_ <= 0 || m_eff_ <= 0) throw ValidationError("no degrees of freedom left after fixed effects");

  const Eigen::Index rows = design.y.size();
  if (rows < k_ + 4) throw ValidationError("fewer observations than parameters");

  scale_.resize(k_);
  Eigen::MatrixXd xs(rows, k_);
  for (Eigen::Index h = 0; h < k_; ++h) {
    const double nrm = flat(design.x[h]).norm();
    if (!(nrm > 0.0) || !std::isfinite(nrm))
      throw CollinearityError("covariate '" + design.names[h] +
                              "' has no variation after the within transformation");
    scale_[h] = nrm;
    xs.col(h) = flat(design.x[h]) / nrm;
  }
  if (k_ > 0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> pivoted(xs);
    pivoted.setThreshold(1e-10);
    if (pivoted.rank() < k_) {
      std::string names;
      const auto& perm = pivoted.colsPermutation().indices();
      for (Eigen::Index r = pivoted.rank(); r < k_; ++r)
        names += (names.empty() ? "" : ", ") + design.names[perm[r]];
      throw CollinearityError("collinear covariates: " + names);
    }
  }

  Eigen::MatrixXd full(rows, k_ + 4);
  full.leftCols(k_) = xs;
  full.col(k_) = flat(design.y);
  full.col(k_ + 1) = flat(design.wy);
  full.col(k_ + 2) = flat(design.y_lag);
  full.col(k_ + 3) = flat(design.wy_lag);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(full);
  r_ = qr.matrixQR().topRows(k_ + 4).triangularView<Eigen::Upper>();
  const Eigen::Matrix4d raa = r_.bottomRightCorner(4, 4);
  q_ = raa.transpose() * raa;

  if (method == LogDetMethod::eigenvalues ||
      (method == LogDetMethod::automatic && w.n() <= kEigenPathMaxN)) {
    if (spectrum) {
      spectrum_ = spectrum;
    } else {
      owned_spectrum_.emplace(w);
      spectrum_ = &*owned_spectrum_;
    }
  }
}

double QuasiLikelihood::log_det(double rho) const {
  if (spectrum_) return spectrum_->log_abs_det(rho);
  return log_det_resolvent(*w_, rho);
}

double QuasiLikelihood::jacobian(double rho) const {
  double j = log_det(rho);
  if (time_effects_) j -= std::log(1.0 - rho);
  return j;
}

double QuasiLikelihood::jacobian_derivative(double rho) const {
  double d = 0.0;
  if (spectrum_) {
    d = spectrum_->log_abs_det_derivative(rho);
  } else {
    const double h = 1e-6;
    d = (log_det(rho + h) - log_det(rho - h)) / (2 * h);
  }
  if (time_effects_) d += 1.0 / (1.0 - rho);
  return d;
}

ConcentratedLogLik QuasiLikelihood::concentrated(double rho, double phi, double gamma) const {
  const Eigen::Vector4d c(1.0, -rho, -phi, -gamma);
  const Eigen::Matrix4d raa = r_.bottomRightCorner(4, 4);
  ConcentratedLogLik out;
  out.ssr = (raa * c).squaredNorm();
  out.sigma_sq = std::max(out.ssr / n_eff_, std::numeric_limits<double>::min());
  out.loglik = -0.5 * n_eff_ * (std::log(2.0 * std::numbers::pi * out.sigma_sq) + 1.0) +
               m_eff_ * jacobian(rho);
  out.beta.resize(k_);
  if (k_ > 0) {
    const Eigen::VectorXd rhs = r_.topRightCorner(k_, 4) * c;
    Eigen::VectorXd scaled =
        r_.topLeftCorner(k_, k_).triangularView<Eigen::Upper>().solve(rhs);
    out.beta = scaled.cwiseQuotient(scale_);
  }
  return out;
}

Eigen::Vector3d QuasiLikelihood::concentrated_gradient(double rho, double phi, double gamma) const {
  const Eigen::Vector4d c(1.0, -rho, -phi, -gamma);
  const Eigen::Matrix4d raa = r_.bottomRightCorner(4, 4);
  const Eigen::Vector4d rc = raa * c;
  const double ssr = std::max(rc.squaredNorm(), std::numeric_limits<double>::min() * n_eff_);
  Eigen::Vector3d g;
  for (int j = 0; j < 3; ++j) {
    // dc/dtheta_j = -e_{j+1}
    const double dssr = -2.0 * rc.dot(raa.col(j + 1));
    g[j] = -0.5 * n_eff_ * dssr / ssr;
  }
  g[0] += m_eff_ * jacobian_derivative(rho);
  return g;
}

double QuasiLikelihood::full(const Eigen::VectorXd& p) const {
  const double rho = p[0], phi = p[1], gamma = p[2];
  const double s2 = p[3 + k_];
  if (!(s2 > 0.0)) return -std::numeric_limits<double>::infinity();
  Eigen::VectorXd v(k_ + 4);
  for (Eigen::Index h = 0; h < k_; ++h) v[h] = -p[3 + h] * scale_[h];
  v.tail<4>() << 1.0, -rho, -phi, -gamma;
  const double ssr = (r_.triangularView<Eigen::Upper>() * v).squaredNorm();
  return -0.5 * n_eff_ * std::log(2.0 * std::numbers::pi * s2) - ssr / (2.0 * s2) +
         m_eff_ * jacobian(rho);
}

Eigen::MatrixXd QuasiLikelihood::residuals(double rho, double phi, double gamma,
                                           const Eigen::VectorXd& beta) const {
  const auto& d = *design_;
  Eigen::MatrixXd e = d.y - rho * d.wy - phi * d.y_lag - gamma * d.wy_lag;
  for (Eigen::Index h = 0; h < k_; ++h) e -= beta[h] * d.x[h];
  return e;
}

Eigen::Vector3d QuasiLikelihood::ols_start() const {
  const auto& d = *design_;
  // Columns of R for the unknowns: X (scaled), then the active lag columns.
  std::vector<Eigen::Index> cols;
  for (Eigen::Index h = 0; h < k_; ++h) cols.push_back(h);
  std::vector<int> which;  // 0 rho, 1 phi, 2 gamma
  which.push_back(0);
  cols.push_back(k_ + 1);
  if (d.time_lag) {
    which.push_back(1);
    cols.push_back(k_ + 2);
  }
  if (d.space_time_lag) {
    which.push_back(2);
    cols.push_back(k_ + 3);
  }
  Eigen::MatrixXd a(k_ + 4, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t c = 0; c < cols.size(); ++c) a.col(c) = r_.col(cols[c]);
  const Eigen::VectorXd b = r_.col(k_);
  Eigen::VectorXd u = a.colPivHouseholderQr().solve(b);
  Eigen::Vector3d theta = Eigen::Vector3d::Zero();
  for (std::size_t j = 0; j < which.size(); ++j) theta[which[j]] = u[k_ + j];
  return theta;
}

ConcentratedLogLik concentrated_loglik(const Eigen::Vector3d& theta, const EstimationDesign& design,
                                       const SpatialWeights& w, LogDetMethod method) {
  QuasiLikelihood ql(design, w, method);
  return ql.concentrated(theta[0], design.time_lag ? theta[1] : 0.0,
                         design.space_time_lag ? theta[2] : 0.0);
}

// --- fit ---------------------------------------------------------------------

std::vector<std::string> FitResult::parameter_names() const {
  std::vector<std::string> names = {"rho", "phi", "gamma"};
  names.insert(names.end(), covariate_names.begin(), covariate_names.end());
  names.push_back("sigma_sq");
  return names;
}

Eigen::VectorXd FitResult::parameters() const {
  Eigen::VectorXd p(beta.size() + 4);
  p << rho, phi, gamma, beta, sigma_sq;
  return p;
}

Eigen::VectorXd FitResult::standard_errors() const {
  if (vcov.rows() != beta.size() + 4)
    return Eigen::VectorXd::Constant(beta.size() + 4, std::numeric_limits<double>::quiet_NaN());
  return vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
}

double FitResult::coefficient(const std::string& name) const {
  for (std::size_t h = 0; h < covariate_names.size(); ++h)
    if (covariate_names[h] == name) return beta[static_cast<Eigen::Index>(h)];
  return 0.0;
}

namespace {

struct ActiveSet {
  bool rho, phi, gamma;
  int count() const { return int(rho) + int(phi) + int(gamma); }
};

Eigen::MatrixXd numerical_hessian(const QuasiLikelihood& ql, const Eigen::VectorXd& p,
                                  const std::vector<Eigen::Index>& idx,
                                  const Eigen::VectorXd& steps) {
  const auto m = static_cast<Eigen::Index>(idx.size());
  Eigen::MatrixXd h(m, m);
  const double f0 = ql.full(p);
  auto eval = [&](Eigen::Index a, double da, Eigen::Index b, double db) {
    Eigen::VectorXd q = p;
    q[idx[a]] += da;
    if (b >= 0) q[idx[b]] += db;
    return ql.full(q);
  };
  for (Eigen::Index a = 0; a < m; ++a) {
    const double ha = steps[a];
    h(a, a) = (eval(a, ha, -1, 0) - 2.0 * f0 + eval(a, -ha, -1, 0)) / (ha * ha);
    for (Eigen::Index b = a + 1; b < m; ++b) {
      const double hb = steps[b];
      const double v = (eval(a, ha, b, hb) - eval(a, ha, b, -hb) - eval(a, -ha, b, hb) +
                        eval(a, -ha, b, -hb)) /
                       (4.0 * ha * hb);
      h(a, b) = v;
      h(b, a) = v;
    }
  }
  return h;
}

void recover_fixed_effects(FitResult& r, const EstimationDesign& d) {
  Eigen::MatrixXd fitted = r.rho * d.raw_wy + r.phi * d.raw_y_lag + r.gamma * d.raw_wy_lag;
  for (std::size_t h = 0; h < d.raw_x.size(); ++h)
    fitted += r.beta[static_cast<Eigen::Index>(h)] * d.raw_x[h];
  const Eigen::MatrixXd u = d.raw_y - fitted;
  auto& fe = r.fixed_effects;
  auto sd = [](const Eigen::VectorXd& v) {
    if (v.size() < 2) return 0.0;
    return std::sqrt((v.array() - v.mean()).square().sum() / double(v.size() - 1));
  };
  if (has_individual(d.fixed_effects)) {
    fe.individual = u.rowwise().mean();
    fe.individual_mean = fe.individual.mean();
    fe.individual_sd = sd(fe.individual);
  }
  if (has_time(d.fixed_effects)) {
    fe.time = u.colwise().mean().transpose();
    if (has_individual(d.fixed_effects)) fe.time.array() -= u.mean();
    fe.time_mean = fe.time.mean();
    fe.time_sd = sd(fe.time);
  }
}

}  // namespace

FitResult fit(const PanelDataset& panel, const SpatialWeights& w, const ModelSpec& spec,
              const FitOptions& options) {
  for (const auto& name : spec.covariate_names) parse_term(name, panel);
  return fit(build_design(panel, w, spec), w, spec, options);
}

FitResult fit(const EstimationDesign& design, const SpatialWeights& w, const ModelSpec& spec,
              const FitOptions& options) {
  QuasiLikelihood ql(design, w, options.logdet, options.spectrum);
  const double bound = options.rho_bound;
  const ActiveSet active{!options.fixed_rho.has_value(), design.time_lag, design.space_time_lag};
  const double n_eff = ql.effective_obs();

  // Unconstrained coordinates: rho = bound * tanh(u).
  auto to_theta = [&](const Eigen::VectorXd& u) {
    Eigen::Vector3d th(options.fixed_rho.value_or(0.0), 0.0, 0.0);
    Eigen::Index j = 0;
    if (active.rho) th[0] = bound * std::tanh(u[j++]);
    if (active.phi) th[1] = u[j++];
    if (active.gamma) th[2] = u[j++];
    return th;
  };
  auto to_u = [&](const Eigen::Vector3d& th) {
    Eigen::VectorXd u(active.count());
    Eigen::Index j = 0;
    if (active.rho) u[j++] = std::atanh(std::clamp(th[0], -0.99 * bound, 0.99 * bound) / bound);
    if (active.phi) u[j++] = th[1];
    if (active.gamma) u[j++] = th[2];
    return u;
  };
  // Gradient of -lnL / N in theta-space.
  auto theta_gradient = [&](const Eigen::Vector3d& th) {
    Eigen::Vector3d g = -ql.concentrated_gradient(th[0], th[1], th[2]) / n_eff;
    Eigen::VectorXd out(active.count());
    Eigen::Index j = 0;
    if (active.rho) out[j++] = g[0];
    if (active.phi) out[j++] = g[1];
    if (active.gamma) out[j++] = g[2];
    return out;
  };
  Objective objective = [&](const Eigen::VectorXd& u, Eigen::VectorXd& grad) {
    const auto th = to_theta(u);
    try {
      const double val = -ql.concentrated(th[0], th[1], th[2]).loglik / n_eff;
      grad = theta_gradient(th);
      if (active.rho) {
        const double t = std::tanh(u[0]);
        grad[0] *= bound * (1.0 - t * t);
      }
      return val;
    } catch (const SingularResolventError&) {
      grad.setZero(u.size());
      return std::numeric_limits<double>::infinity();
    }
  };

  FitResult r;
  r.spec = spec;
  r.covariate_names = design.names;
  r.period_ids = design.period_ids;

  Eigen::Vector3d best_theta(options.fixed_rho.value_or(0.0), 0.0, 0.0);
  if (active.count() > 0) {
    std::vector<Eigen::Vector3d> starts;
    Eigen::Vector3d ols = ql.ols_start();
    if (!active.rho) ols[0] = *options.fixed_rho;
    starts.push_back(ols);
    std::mt19937_64 rng(options.start_seed);
    std::uniform_real_distribution<double> unif(-0.9, 0.9);
    while (static_cast<int>(starts.size()) < std::max(1, options.starts)) {
      Eigen::Vector3d s(active.rho ? unif(rng) : *options.fixed_rho, active.phi ? unif(rng) : 0.0,
                        active.gamma ? unif(rng) : 0.0);
      if (s.sum() < 1.0) starts.push_back(s);
    }

    BfgsOptions bo;
    bo.max_iterations = options.max_iterations;
    bo.gradient_tolerance = 0.0;  // the theta-space criterion is applied below
    double best_value = std::numeric_limits<double>::infinity();
    BfgsResult best;
    int best_start = -1;
    int failures = 0;
    for (std::size_t s = 0; s < starts.size(); ++s) {
      // Run in u-space; stop on the theta-space gradient norm.
      BfgsOptions pass = bo;
      BfgsResult res;
      Eigen::VectorXd u = to_u(starts[s]);
      int total_iter = 0;
      res.status = BfgsStatus::failed;
      for (int round = 0; round < 4; ++round) {
        pass.gradient_tolerance = options.gradient_tolerance;
        res = minimize_bfgs(objective, u, pass);
        total_iter += res.iterations;
        if (res.status == BfgsStatus::failed) break;
        const auto th = to_theta(res.x);
        const double gnorm = theta_gradient(th).norm();
        if (gnorm <= options.gradient_tolerance) {
          res.status = BfgsStatus::converged;
          break;
        }
        if (res.status == BfgsStatus::stalled || res.status == BfgsStatus::max_iterations) break;
        u = res.x;
      }
      res.iterations = total_iter;
      const bool usable = res.status == BfgsStatus::converged || res.status == BfgsStatus::stalled;
      if (!usable) {
        ++failures;
        continue;
      }
      if (res.value < best_value) {
        best_value = res.value;
        best = res;
        best_start = static_cast<int>(s);
      }
    }
    if (best_start < 0)
      throw EstimationError(fmt::format("optimizer did not converge from any of {} starts",
                                        starts.size()));
    best_theta = to_theta(best.x);
    r.convergence.starts = static_cast<int>(starts.size());
    r.convergence.failed_starts = failures;
    r.convergence.best_start = best_start;
    r.convergence.iterations = best.iterations;
    r.convergence.gradient_norm = theta_gradient(best_theta).norm();
    r.convergence.status = to_string(best.status);
  } else {
    r.convergence.status = "fixed";
  }

  const auto conc = ql.concentrated(best_theta[0], best_theta[1], best_theta[2]);
  r.rho = best_theta[0];
  r.phi = best_theta[1];
  r.gamma = best_theta[2];
  r.beta = conc.beta;
  r.sigma_sq = conc.sigma_sq;
  r.loglik = conc.loglik;
  r.n_groups = design.n;
  r.n_years = design.periods;
  r.n_obs = design.n * design.periods;

  // Covariance from the numerical Hessian of the full quasi-likelihood.
  const Eigen::Index k = static_cast<Eigen::Index>(design.x.size());
  const Eigen::VectorXd p = r.parameters();
  std::vector<Eigen::Index> idx;
  std::vector<double> col_norms;
  const double sigma = std::sqrt(r.sigma_sq);
  auto norm_or_one = [](double v) { return v > 0.0 ? v : 1.0; };
  if (active.rho) {
    idx.push_back(0);
    col_norms.push_back(norm_or_one(flat(design.wy).norm()));
  }
  if (active.phi) {
    idx.push_back(1);
    col_norms.push_back(norm_or_one(flat(design.y_lag).norm()));
  }
  if (active.gamma) {
    idx.push_back(2);
    col_norms.push_back(norm_or_one(flat(design.wy_lag).norm()));
  }
  for (Eigen::Index h = 0; h < k; ++h) {
    idx.push_back(3 + h);
    col_norms.push_back(norm_or_one(flat(design.x[h]).norm()));
  }
  Eigen::VectorXd steps(static_cast<Eigen::Index>(idx.size()) + 1);
  for (std::size_t j = 0; j < col_norms.size(); ++j)
    steps[static_cast<Eigen::Index>(j)] = 1e-2 * sigma / col_norms[j];
  idx.push_back(3 + k);
  steps[steps.size() - 1] = 1e-2 * r.sigma_sq * std::sqrt(2.0 / n_eff);
  for (Eigen::Index j = 0; j < steps.size(); ++j)
    steps[j] = std::max(steps[j], 1e-12 * (1.0 + std::abs(p[idx[j]])));

  const Eigen::MatrixXd hess = numerical_hessian(ql, p, idx, steps);
  r.vcov = Eigen::MatrixXd::Zero(k + 4, k + 4);
  r.vcov_usable = false;
  if (hess.allFinite()) {
    const Eigen::MatrixXd info = -hess;
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(info.rows(), info.cols()));
      inv = 0.5 * (inv + inv.transpose());
      if (inv.allFinite()) {
        for (std::size_t a = 0; a < idx.size(); ++a)
          for (std::size_t b = 0; b < idx.size(); ++b)
            r.vcov(idx[a], idx[b]) = inv(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
        r.vcov_usable = true;
      }
    }
  }
  if (!r.vcov_usable) {
    r.vcov.setConstant(std::numeric_limits<double>::quiet_NaN());
    r.warnings.push_back("Hessian of the quasi-likelihood is not invertible; covariance unusable");
  }

  recover_fixed_effects(r, design);
  r.pseudo_r2 = pseudo_r2(r, design);

  const double sum = r.rho + r.phi + r.gamma;
  if (sum >= 1.0)
    r.warnings.push_back(fmt::format(
        "rho + phi + gamma = {:.6g} >= 1: process is not stable (cointegrated or explosive)", sum));
  if (active.rho && std::abs(r.rho) > 0.99 * bound)
    r.warnings.push_back("rho estimate is at the boundary of the admissible interval");
  if (has_individual(design.fixed_effects) && (design.time_lag || design.space_time_lag))
    r.warnings.push_back(
        "individual effects removed by demeaning; the O(1/T) dynamic-panel bias is not corrected");
  return r;
}

PseudoR2 pseudo_r2(const FitResult& r, const EstimationDesign& d) {
  Eigen::MatrixXd fitted = r.rho * d.raw_wy + r.phi * d.raw_y_lag + r.gamma * d.raw_wy_lag;
  for (std::size_t h = 0; h < d.raw_x.size(); ++h)
    fitted += r.beta[static_cast<Eigen::Index>(h)] * d.raw_x[h];
  const FixedEffects wfe =
      d.fixed_effects == FixedEffects::none ? FixedEffects::individual : d.fixed_effects;
  PseudoR2 out;
  const Eigen::MatrixXd fw = within_transform(fitted, wfe);
  const Eigen::MatrixXd yw = within_transform(d.raw_y, wfe);
  out.within = squared_correlation(flat(fw), flat(yw));
  out.between = squared_correlation(fitted.rowwise().mean(), d.raw_y.rowwise().mean());
  out.overall = squared_correlation(flat(fitted), flat(d.raw_y));
  return out;
}

PseudoR2 pseudo_r2(const FitResult& r, const PanelDataset& panel, const SpatialWeights& w) {
  return pseudo_r2(r, build_design(panel, w, r.spec));
}

// --- stability ---------------------------------------------------------------

std::string to_string(Regime r) {
  switch (r) {
    case Regime::stable: return "stable";
    case Regime::cointegrated: return "cointegrated";
    case Regime::explosive: return "explosive";
  }
  return "?";
}

double chi2_1_survival(double x) {
  if (!(x > 0.0)) return 1.0;
  return std::erfc(std::sqrt(x / 2.0));
}

double normal_two_sided_p(double z) { return std::erfc(std::abs(z) / std::numbers::sqrt2); }

StabilityReport wald_cointegration_test(const FitResult& fit, double alpha) {
  if (fit.vcov.rows() < 3 || fit.vcov.cols() < 3 || !fit.vcov_usable)
    throw EstimationError("Wald test needs a usable covariance matrix");
  StabilityReport rep;
  rep.alpha = alpha;
  rep.sum_rpg = fit.rho + fit.phi + fit.gamma;
  rep.variance = fit.vcov.topLeftCorner(3, 3).sum();
  if (!(rep.variance > 0.0) || !std::isfinite(rep.variance))
    throw EstimationError(fmt::format(
        "variance of rho + phi + gamma is not positive ({:.6g}); Wald test not computed", rep.variance));
  const double s = rep.sum_rpg - 1.0;
  rep.wald_stat = s * s / rep.variance;
  rep.p_value = chi2_1_survival(rep.wald_stat);
  if (rep.p_value >= alpha)
    rep.regime = Regime::cointegrated;
  else
    rep.regime = s < 0.0 ? Regime::stable : Regime::explosive;
  return rep;
}

}  // namespace sdpd
