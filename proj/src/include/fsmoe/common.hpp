#pragma once

#include <stdexcept>
#include <string>

namespace fsmoe {

// Process exit codes shared by the CLI and the error types below.
enum ExitCode : int {
  exit_ok = 0,
  exit_config_error = 2,
  exit_fit_quality = 3,
  exit_invariant = 4,
};

// Invalid user-supplied configuration (bad divisibility, missing field, ...).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Regression quality below the requested threshold.
struct FitQualityError : std::runtime_error {
  explicit FitQualityError(const std::string& what) : std::runtime_error(what) {}
};

// Internal consistency violation (malformed DAG, broken conservation, ...).
struct InvariantError : std::runtime_error {
  explicit InvariantError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace fsmoe
