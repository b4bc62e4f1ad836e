#pragma once

#include <stdexcept>
#include <string>

namespace mdprod {

// Error hierarchy. The CLI maps each family onto an exit code.

/// Invalid or unknown configuration values (exit code 2).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Problems with input data: missing columns, invalid rows, empty samples (exit code 3).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a formula (e.g. beta_0 == 0).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Numerical failure: optimizer non-convergence, FOC solver failure (exit code 4).
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mdprod
