#include "sdpd/effects.hpp"

#include "sdpd/errors.hpp"
#include "sdpd/terms.hpp"

#include <fmt/format.h>

#include <cmath>
#include <set>

namespace sdpd {
namespace {

// Name-only parsing when no panel is at hand: a factor is a base name unless
// it carries a recognised suffix.
bool looks_like_base(const std::string& s) {
  auto ends = [&](const std::string& suf) {
    return s.size() > suf.size() && s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
  };
  return !ends("_sq") && !ends("lag") && s.find("_x_") == std::string::npos;
}

std::vector<Term> fit_terms(const FitResult& fit, const PanelDataset* panel) {
  std::vector<Term> terms;
  for (const auto& name : fit.covariate_names)
    terms.push_back(panel ? parse_term(name, *panel) : parse_term(name, looks_like_base));
  return terms;
}

// Constant marginal weight when every involved term is linear in the
// covariate alone.
std::optional<double> constant_weight(const FitResult& fit, const std::vector<Term>& terms,
                                      const std::string& covariate, int lag) {
  double d = 0.0;
  for (std::size_t h = 0; h < terms.size(); ++h) {
    const auto& t = terms[h];
    if (!term_involves(t, covariate, lag)) continue;
    if (t.factors.size() != 1 || t.factors[0].power != 1) return std::nullopt;
    d += fit.beta[static_cast<Eigen::Index>(h)];
  }
  return d;
}

void require_covariate(const FitResult& fit, const std::vector<Term>& terms,
                       const std::string& covariate, int lag) {
  for (const auto& t : terms)
    if (term_involves(t, covariate, lag)) return;
  throw ValidationError(fmt::format("covariate '{}'{} does not enter the fitted model", covariate,
                                    lag ? " (lagged)" : ""));
  (void)fit;
}

EffectSummary summarize_full(const Eigen::VectorXd& diag, double sum_all) {
  const auto n = static_cast<double>(diag.size());
  EffectSummary s;
  const double trace = diag.sum();
  s.direct = trace / n;
  s.indirect = n > 1 ? (sum_all - trace) / (n * (n - 1)) : 0.0;
  s.total = sum_all / n;
  return s;
}

}  // namespace

std::string to_string(Horizon h) { return h == Horizon::short_term ? "short" : "long"; }

EffectKernel::EffectKernel(const SpatialWeights& w, const SpatialParameters& p, Horizon horizon)
    : w_(&w), horizon_(horizon) {
  if (horizon == Horizon::short_term) {
    scale_ = 1.0;
    rho_eff_ = p.rho;
  } else {
    const double gap = 1.0 - p.phi - p.rho - p.gamma;
    if (std::abs(gap) <= 1e-12)
      throw CointegratedKernelError(fmt::format(
          "long-term kernel is singular: rho + phi + gamma = 1 (rho={:.6g}, phi={:.6g}, gamma={:.6g})",
          p.rho, p.phi, p.gamma));
    const double a = 1.0 - p.phi;
    if (std::abs(a) <= 1e-14)
      throw SingularResolventError("long-term kernel is singular: phi = 1");
    scale_ = 1.0 / a;
    rho_eff_ = (p.rho + p.gamma) / a;
  }
  resolvent_ = std::make_unique<Resolvent>(w, rho_eff_);
}

const Eigen::VectorXd& EffectKernel::inverse_diagonal() const {
  if (!diag_) diag_ = scale_ * resolvent_->inverse_diagonal();
  return *diag_;
}

Eigen::MatrixXd EffectKernel::apply(const Eigen::MatrixXd& b) const {
  return scale_ * resolvent_->solve(b);
}

Eigen::VectorXd EffectKernel::row_sums(const Eigen::VectorXd& d) const {
  return scale_ * resolvent_->solve(d);
}

Eigen::VectorXd EffectKernel::diagonal(const Eigen::VectorXd& d) const {
  return inverse_diagonal().cwiseProduct(d);
}

EffectSummary EffectKernel::summarize(const Eigen::VectorXd& d) const {
  if (d.size() != w_->n()) throw ValidationError("marginal weight vector has wrong length");
  if (!column_sums_)
    column_sums_ = scale_ * resolvent_->solve_transpose(Eigen::VectorXd::Ones(w_->n()));
  return summarize_full(diagonal(d), column_sums_->dot(d));
}

EffectSummary EffectKernel::summarize(double d) const {
  return summarize(Eigen::VectorXd::Constant(w_->n(), d));
}

Eigen::VectorXd marginal_weights(const FitResult& fit, const PanelDataset& panel,
                                 const std::string& covariate, Eigen::Index t, int lag) {
  if (t < 0 || t >= panel.T())
    throw ValidationError(fmt::format("period index {} outside [0, {})", t, panel.T()));
  const auto terms = fit_terms(fit, &panel);
  require_covariate(fit, terms, covariate, lag);
  Eigen::VectorXd d = Eigen::VectorXd::Zero(panel.n());
  for (std::size_t h = 0; h < terms.size(); ++h) {
    if (!term_involves(terms[h], covariate, lag)) continue;
    d += fit.beta[static_cast<Eigen::Index>(h)] *
         term_derivative(terms[h], panel, covariate, lag).col(t);
  }
  return d;
}

bool has_data_dependent_weights(const FitResult& fit, const std::string& covariate, int lag) {
  return !constant_weight(fit, fit_terms(fit, nullptr), covariate, lag).has_value();
}

namespace {

EffectSummary invariant_effects(const FitResult& fit, const SpatialWeights& w,
                                const std::string& covariate, Horizon horizon) {
  const auto terms = fit_terms(fit, nullptr);
  require_covariate(fit, terms, covariate, 0);
  auto d = constant_weight(fit, terms, covariate, 0);
  if (!d)
    throw ValidationError("effects of '" + covariate +
                          "' depend on data (squares or interactions); supply the panel and period");
  return EffectKernel(w, SpatialParameters::from(fit), horizon).summarize(*d);
}

EffectSummary period_effects(const FitResult& fit, const SpatialWeights& w,
                             const PanelDataset& panel, const std::string& covariate,
                             Eigen::Index t, Horizon horizon) {
  const Eigen::VectorXd d = marginal_weights(fit, panel, covariate, t, 0);
  if (!d.allFinite())
    throw ValidationError(fmt::format("marginal weights of '{}' unavailable at period {}", covariate,
                                      t < static_cast<Eigen::Index>(panel.period_ids.size())
                                          ? panel.period_ids[t]
                                          : static_cast<int>(t)));
  return EffectKernel(w, SpatialParameters::from(fit), horizon).summarize(d);
}

}  // namespace

EffectSummary short_term_effects(const FitResult& fit, const SpatialWeights& w,
                                 const std::string& covariate) {
  return invariant_effects(fit, w, covariate, Horizon::short_term);
}

EffectSummary long_term_effects(const FitResult& fit, const SpatialWeights& w,
                                const std::string& covariate) {
  return invariant_effects(fit, w, covariate, Horizon::long_term);
}

EffectSummary short_term_effects(const FitResult& fit, const SpatialWeights& w,
                                 const PanelDataset& panel, const std::string& covariate,
                                 Eigen::Index t) {
  return period_effects(fit, w, panel, covariate, t, Horizon::short_term);
}

EffectSummary long_term_effects(const FitResult& fit, const SpatialWeights& w,
                                const PanelDataset& panel, const std::string& covariate,
                                Eigen::Index t) {
  return period_effects(fit, w, panel, covariate, t, Horizon::long_term);
}

std::vector<PeriodEffect> time_varying_effects(const FitResult& fit, const SpatialWeights& w,
                                               const PanelDataset& panel,
                                               const std::string& covariate, Horizon horizon) {
  const EffectKernel kernel(w, SpatialParameters::from(fit), horizon);
  std::vector<PeriodEffect> out;
  for (Eigen::Index t = 0; t < panel.T(); ++t) {
    const Eigen::VectorXd d = marginal_weights(fit, panel, covariate, t, 0);
    if (!d.allFinite()) continue;
    out.push_back({panel.period_ids[t], kernel.summarize(d)});
  }
  return out;
}

EffectSummary ecm_convergence_effects(const FitResult& fit, const SpatialWeights& w) {
  const Resolvent s(w, fit.rho);
  const double a = fit.phi - 1.0;
  const double b = fit.rho + fit.gamma;
  // M = a S^{-1} + b S^{-1} W
  // Scale sums rather than vectors so that rho = gamma = 0 gives phi - 1 exactly.
  const double trace = a * s.inverse_diagonal().sum() + b * s.inverse_times_diagonal(w.sparse()).sum();
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(w.n());
  const double sum_all = a * s.solve(ones).sum() + b * s.solve(w.lag(ones)).sum();
  const auto n = static_cast<double>(w.n());
  EffectSummary out;
  out.direct = trace / n;
  out.indirect = w.n() > 1 ? (sum_all - trace) / (n * (n - 1)) : 0.0;
  out.total = sum_all / n;
  return out;
}

std::vector<LaggedEffect> ecm_lagged_effects(const FitResult& fit, const PanelDataset& panel,
                                             const std::string& covariate) {
  std::vector<LaggedEffect> out;
  for (Eigen::Index t = 0; t < panel.T(); ++t) {
    Eigen::VectorXd d = marginal_weights(fit, panel, covariate, t, 1);
    if (!d.allFinite()) continue;
    out.push_back({panel.period_ids[t], d.mean(), std::move(d)});
  }
  return out;
}

WeatherLaggedEffects ecm_lagged_weather_effects(const FitResult& fit, const PanelDataset& panel) {
  return {ecm_lagged_effects(fit, panel, "dry"), ecm_lagged_effects(fit, panel, "wet")};
}

LocalEffects local_effects(const FitResult& fit, const SpatialWeights& w,
                           const std::string& covariate, Horizon horizon,
                           const PanelDataset* panel, Eigen::Index t) {
  const EffectKernel kernel(w, SpatialParameters::from(fit), horizon);
  Eigen::VectorXd d;
  const auto terms = fit_terms(fit, panel);
  require_covariate(fit, terms, covariate, 0);
  if (auto c = constant_weight(fit, terms, covariate, 0)) {
    d = Eigen::VectorXd::Constant(w.n(), *c);
  } else {
    if (!panel || t < 0)
      throw ValidationError("local effects of '" + covariate + "' need the panel and a period");
    d = marginal_weights(fit, *panel, covariate, t, 0);
    if (!d.allFinite()) throw ValidationError("marginal weights unavailable at the requested period");
  }
  LocalEffects out;
  out.row_sum = kernel.row_sums(d);
  out.direct = kernel.diagonal(d);
  out.indirect = out.row_sum - out.direct;
  return out;
}

std::vector<std::string> contemporaneous_covariates(const FitResult& fit, const PanelDataset& panel) {
  std::vector<std::string> out;
  std::set<std::string> seen;
  for (const auto& name : fit.covariate_names) {
    const auto term = parse_term(name, panel);
    for (const auto& f : term.factors)
      if (f.lag == 0 && term.factors.size() == 1 && seen.insert(f.base).second)
        out.push_back(f.base);
  }
  return out;
}

EffectsReport compute_effects(const FitResult& fit, const SpatialWeights& w,
                              const PanelDataset& panel, const std::vector<std::string>& covariates) {
  EffectsReport rep;
  const auto params = SpatialParameters::from(fit);
  const auto terms = fit_terms(fit, &panel);

  std::optional<EffectKernel> short_k(std::in_place, w, params, Horizon::short_term);
  std::optional<EffectKernel> long_k;
  try {
    long_k.emplace(w, params, Horizon::long_term);
  } catch (const SingularResolventError& e) {
    rep.skipped.push_back({"long-term effects", e.what()});
  }

  for (const auto& cov : covariates) {
    require_covariate(fit, terms, cov, 0);
    const auto constant = constant_weight(fit, terms, cov, 0);
    // Last usable period for local maps of data-dependent covariates.
    Eigen::Index last_t = panel.T() - 1;
    for (Horizon h : {Horizon::short_term, Horizon::long_term}) {
      const auto& kernel = h == Horizon::short_term ? short_k : long_k;
      if (!kernel) continue;
      if (constant) {
        rep.table.push_back({cov, h, kernel->summarize(*constant)});
        const Eigen::VectorXd d = Eigen::VectorXd::Constant(w.n(), *constant);
        LocalEffects le;
        le.row_sum = kernel->row_sums(d);
        le.direct = kernel->diagonal(d);
        le.indirect = le.row_sum - le.direct;
        rep.local.push_back({cov, h, std::move(le)});
      } else {
        TimeVaryingSeries tv{cov, h, {}};
        Eigen::VectorXd mean_d = Eigen::VectorXd::Zero(w.n());
        int count = 0;
        for (Eigen::Index t = 0; t < panel.T(); ++t) {
          const Eigen::VectorXd d = marginal_weights(fit, panel, cov, t, 0);
          if (!d.allFinite()) continue;
          tv.series.push_back({panel.period_ids[t], kernel->summarize(d)});
          mean_d += d;
          ++count;
        }
        if (count == 0) {
          rep.skipped.push_back({cov + " " + to_string(h), "no period with complete marginal weights"});
          continue;
        }
        // The summaries are linear in d, so the period average equals the
        // summary at the average weights.
        mean_d /= count;
        rep.table.push_back({cov, h, kernel->summarize(mean_d)});
        rep.time_varying.push_back(std::move(tv));
        const Eigen::VectorXd d_last = marginal_weights(fit, panel, cov, last_t, 0);
        LocalEffects le;
        le.row_sum = kernel->row_sums(d_last);
        le.direct = kernel->diagonal(d_last);
        le.indirect = le.row_sum - le.direct;
        rep.local.push_back({cov, h, std::move(le)});
      }
    }
    if (!long_k) rep.skipped.push_back({cov + " long", "long-term kernel singular"});
  }

  try {
    rep.ecm_convergence = ecm_convergence_effects(fit, w);
  } catch (const SingularResolventError& e) {
    rep.skipped.push_back({"ecm convergence", e.what()});
  }
  for (const auto& cov : covariates) {
    bool lagged = false;
    for (const auto& t : terms) lagged = lagged || term_involves(t, cov, 1);
    if (lagged) rep.ecm_lagged.emplace_back(cov, ecm_lagged_effects(fit, panel, cov));
  }
  return rep;
}

}  // namespace sdpd
