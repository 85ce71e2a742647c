#pragma once

#include <stdexcept>
#include <string>

namespace sgsw {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Argument outside the mathematical domain of a function (e.g. W0 below -1/e).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Solver reached a state it cannot continue from (overflow, degenerate
/// coupling row, auxiliary variable leaving (0, inf), divergence).
class SolverError : public Error {
 public:
  using Error::Error;
};

/// Bad user input. `field()` names the offending configuration key.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& what)
      : Error(field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

}  // namespace sgsw
