#pragma once

#include <stdexcept>
#include <string>

namespace sdpd {

// Bad input data or configuration. The CLI maps these to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during estimation or effect evaluation (exit code 1).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// I - rho W (or the long-run kernel) cannot be inverted.
class SingularResolventError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

// Long-run kernel at rho + phi + gamma = 1.
class CointegratedKernelError : public SingularResolventError {
 public:
  using SingularResolventError::SingularResolventError;
};

class CollinearityError : public EstimationError {
 public:
  using EstimationError::EstimationError;
};

}  // namespace sdpd
