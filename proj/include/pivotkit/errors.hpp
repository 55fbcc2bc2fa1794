#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace pk {

/// Invalid or inconsistent configuration (bad dimensions, unknown keys,
/// out-of-range values). Maps to CLI exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A required upstream artifact (dataset, policy, estimator) is missing.
/// The message names the command that produces it. Maps to exit code 2.
struct DependencyError : std::runtime_error {
  explicit DependencyError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Numerical failure the caller cannot recover from (solver abort,
/// non-finite values). Maps to exit code 3.
struct NumericalError : std::runtime_error {
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

/// API misuse (stepping a terminated episode, stale caches).
struct UsageError : std::logic_error {
  explicit UsageError(const std::string& msg) : std::logic_error(msg) {}
};

}  // namespace pk
