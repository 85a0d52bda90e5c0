#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gridlearn {

// Base of every exception thrown by the library. `kind()` is the stable
// machine-readable tag the CLI puts into its error JSON.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse_error", what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error("validation_error", what) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error("shape_error", what) {}
};

class ConvergenceError : public Error {
 public:
  explicit ConvergenceError(const std::string& what) : Error("convergence_error", what) {}
};

class IntegrationError : public Error {
 public:
  IntegrationError(const std::string& what, std::size_t step)
      : Error("integration_error", what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

class FaultRejected : public Error {
 public:
  explicit FaultRejected(const std::string& what) : Error("fault_rejected", what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error("config_error", what) {}
};

}  // namespace gridlearn
