#ifndef STEINGP_ERRORS_HPP
#define STEINGP_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace steingp {

/// Bad argument to a library call (shape mismatch, unknown parameter id, ...).
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A value outside the support of a density (e.g. non-positive under a Gamma).
class DomainError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Factorization failure or non-finite intermediate.
class NumericalError : public std::runtime_error {
public:
  explicit NumericalError(const std::string &what, double jitter = 0.0)
      : std::runtime_error(what), jitter_(jitter) {}

  double attempted_jitter() const noexcept { return jitter_; }

private:
  double jitter_;
};

/// Malformed or missing input data (CSV cells, files).
class DataError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed run configuration.
class ConfigError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

} // namespace steingp

#endif // STEINGP_ERRORS_HPP
