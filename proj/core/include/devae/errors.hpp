#pragma once

#include <stdexcept>
#include <string>

namespace devae {

/// Invalid configuration: bad shapes, inconsistent hyperparameters, budget violations.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data that violates its contract (targets outside [0,1], malformed files, ...).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite value appeared in a loss term. Training aborts on this.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, long iteration, std::string term)
      : std::runtime_error(what), iteration_(iteration), term_(std::move(term)) {}

  long iteration() const noexcept { return iteration_; }
  const std::string& term() const noexcept { return term_; }

 private:
  long iteration_;
  std::string term_;
};

/// API misuse by the caller, e.g. an out-of-range space index.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace devae
