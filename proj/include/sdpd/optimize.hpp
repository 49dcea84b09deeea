#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace sdpd {

struct BfgsOptions {
  double gradient_tolerance = 1e-8;
  int max_iterations = 500;
};

enum class BfgsStatus {
  converged,       // gradient norm below tolerance
  stalled,         // line search cannot decrease f any further
  max_iterations,
  failed,          // non-finite objective at the start point
};

std::string to_string(BfgsStatus s);

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  BfgsStatus status = BfgsStatus::failed;
};

// Objective returns f(x) and writes the gradient. Non-finite values are
// treated as +inf by the line search.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

// Quasi-Newton minimization with BFGS inverse-Hessian updates and a
// backtracking Armijo line search.
BfgsResult minimize_bfgs(const Objective& f, Eigen::VectorXd x0, const BfgsOptions& options = {});

}  // namespace sdpd
