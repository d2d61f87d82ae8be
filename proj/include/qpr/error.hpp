#pragma once

#include <stdexcept>
#include <string>

namespace qpr {

/// Machine-readable failure class. The CLI maps each to a distinct exit code.
enum class ErrorCategory {
  domain = 2,
  validation = 3,
  integration = 4,
  decoding = 5,
  io = 6,
  invariant = 7,
};

const char* category_name(ErrorCategory c) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory category, const std::string& what)
      : std::runtime_error(what), category_(category) {}
  ErrorCategory category() const noexcept { return category_; }

 private:
  ErrorCategory category_;
};

class DomainError : public Error {
 public:
  explicit DomainError(const std::string& what) : Error(ErrorCategory::domain, what) {}
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(ErrorCategory::validation, what) {}
};

/// Raised when a propagation drifts off the unitary group beyond tolerance.
class IntegrationError : public Error {
 public:
  explicit IntegrationError(const std::string& what) : Error(ErrorCategory::integration, what) {}
};

/// Raised when Fourier decoding sees energy in bins no admitted polytope maps to.
class DecodingError : public Error {
 public:
  explicit DecodingError(const std::string& what) : Error(ErrorCategory::decoding, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorCategory::io, what) {}
};

class InvariantError : public Error {
 public:
  explicit InvariantError(const std::string& what) : Error(ErrorCategory::invariant, what) {}
};

}  // namespace qpr
