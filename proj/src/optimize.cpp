#include "sdpd/optimize.hpp"

#include <cmath>
#include <limits>

namespace sdpd {

std::string to_string(BfgsStatus s) {
  switch (s) {
    case BfgsStatus::converged: return "converged";
    case BfgsStatus::stalled: return "stalled";
    case BfgsStatus::max_iterations: return "max_iterations";
    case BfgsStatus::failed: return "failed";
  }
  return "?";
}

BfgsResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& options) {
  const auto dim = x0.size();
  BfgsResult r;
  r.x = std::move(x0);
  r.gradient = Eigen::VectorXd::Zero(dim);
  r.value = f(r.x, r.gradient);
  if (!std::isfinite(r.value) || !r.gradient.allFinite()) {
    r.status = BfgsStatus::failed;
    return r;
  }

  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd g_new(dim);
  for (r.iterations = 0; r.iterations < options.max_iterations; ++r.iterations) {
    if (r.gradient.norm() <= options.gradient_tolerance) {
      r.status = BfgsStatus::converged;
      return r;
    }
    Eigen::VectorXd dir = -h_inv * r.gradient;
    double slope = r.gradient.dot(dir);
    if (!(slope < 0.0)) {
      // Lost descent: restart from steepest descent.
      h_inv.setIdentity();
      dir = -r.gradient;
      slope = -r.gradient.squaredNorm();
    }
    // Cap the first step so a poor initial scale cannot leave the basin.
    double step = 1.0;
    if (r.iterations == 0) step = std::min(1.0, 0.1 / std::max(dir.norm(), 1e-300));

    constexpr double c1 = 1e-4;
    bool accepted = false;
    Eigen::VectorXd x_new;
    double f_new = 0.0;
    for (int ls = 0; ls < 60; ++ls) {
      x_new = r.x + step * dir;
      f_new = f(x_new, g_new);
      if (std::isfinite(f_new) && g_new.allFinite() && f_new <= r.value + c1 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (h_inv.isIdentity()) {
        r.status = BfgsStatus::stalled;
        return r;
      }
      h_inv.setIdentity();
      continue;
    }

    Eigen::VectorXd s = x_new - r.x;
    Eigen::VectorXd yv = g_new - r.gradient;
    const double sy = s.dot(yv);
    const double improvement = r.value - f_new;
    r.x = x_new;
    r.value = f_new;
    r.gradient = g_new;
    if (sy > 1e-300) {
      if (r.iterations == 0) h_inv *= sy / yv.squaredNorm();
      const double rho = 1.0 / sy;
      Eigen::MatrixXd id = Eigen::MatrixXd::Identity(dim, dim);
      h_inv = (id - rho * s * yv.transpose()) * h_inv * (id - rho * yv * s.transpose()) +
              rho * s * s.transpose();
    }
    if (improvement <= 4 * std::numeric_limits<double>::epsilon() * std::abs(r.value) &&
        s.norm() <= 1e-14 * (1.0 + r.x.norm())) {
      r.status = BfgsStatus::stalled;
      return r;
    }
  }
  r.status = r.gradient.norm() <= options.gradient_tolerance ? BfgsStatus::converged
                                                             : BfgsStatus::max_iterations;
  return r;
}

}  // namespace sdpd
