#include "sdpd/terms.hpp"

#include "sdpd/errors.hpp"
#include "sdpd/panel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace sdpd {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() > suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<std::string> split_products(const std::string& name) {
  static const std::string sep = "_x_";
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    auto pos = name.find(sep, start);
    if (pos == std::string::npos) {
      parts.push_back(name.substr(start));
      break;
    }
    parts.push_back(name.substr(start, pos - start));
    start = pos + sep.size();
  }
  return parts;
}

Factor parse_factor(const std::string& s, const std::string& term_name,
                    const BaseLookup& is_base) {
  if (is_base(s)) return {s, 0, 1};
  if (ends_with(s, "_sq")) {
    auto b = s.substr(0, s.size() - 3);
    if (is_base(b)) return {b, 0, 2};
  }
  if (ends_with(s, "_lag")) {
    auto b = s.substr(0, s.size() - 4);
    if (is_base(b)) return {b, 1, 1};
  }
  if (ends_with(s, "lag")) {
    auto b = s.substr(0, s.size() - 3);
    if (is_base(b)) return {b, 1, 1};
  }
  throw ValidationError("unknown covariate '" + term_name + "'" +
                        (s == term_name ? std::string{}
                                        : " (factor '" + s + "' not found)"));
}

Eigen::MatrixXd factor_values(const Factor& f, const PanelDataset& panel) {
  const auto& x = panel.covariate(f.base);
  Eigen::MatrixXd v = f.power == 2 ? Eigen::MatrixXd(x.array().square()) : x;
  if (f.lag == 1) v = lag_one_period(v);
  return v;
}

}  // namespace

int Term::max_lag() const {
  int m = 0;
  for (const auto& f : factors) m = std::max(m, f.lag);
  return m;
}

Term parse_term(const std::string& name, const BaseLookup& is_base) {
  if (name.empty()) throw ValidationError("empty covariate name");
  Term t{name, {}};
  // A raw covariate whose name happens to contain "_x_" wins.
  if (is_base(name)) {
    t.factors.push_back({name, 0, 1});
    return t;
  }
  for (const auto& part : split_products(name))
    t.factors.push_back(parse_factor(part, name, is_base));
  return t;
}

Term parse_term(const std::string& name, const PanelDataset& panel) {
  return parse_term(name, [&](const std::string& b) { return panel.has_covariate(b); });
}

Eigen::MatrixXd evaluate_term(const Term& term, const PanelDataset& panel) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Ones(panel.n(), panel.T());
  for (const auto& f : term.factors) out.array() *= factor_values(f, panel).array();
  return out;
}

bool term_involves(const Term& term, const std::string& base, int lag) {
  return std::any_of(term.factors.begin(), term.factors.end(), [&](const Factor& f) {
    return f.base == base && f.lag == lag;
  });
}

Eigen::MatrixXd term_derivative(const Term& term, const PanelDataset& panel,
                                const std::string& base, int lag) {
  Eigen::MatrixXd total = Eigen::MatrixXd::Zero(panel.n(), panel.T());
  if (!term_involves(term, base, lag)) return total;
  // Product rule over the factors that match (base, lag).
  for (std::size_t i = 0; i < term.factors.size(); ++i) {
    const auto& fi = term.factors[i];
    if (fi.base != base || fi.lag != lag) continue;
    Eigen::MatrixXd piece;
    if (fi.power == 2) {
      Factor linear{fi.base, fi.lag, 1};
      piece = 2.0 * factor_values(linear, panel);
    } else {
      piece = Eigen::MatrixXd::Ones(panel.n(), panel.T());
      if (fi.lag == 1) piece.col(0).setConstant(kNaN);
    }
    for (std::size_t j = 0; j < term.factors.size(); ++j) {
      if (j == i) continue;
      piece.array() *= factor_values(term.factors[j], panel).array();
    }
    total += piece;
  }
  return total;
}

}  // namespace sdpd
