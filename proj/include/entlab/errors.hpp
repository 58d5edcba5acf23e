#pragma once

#include <stdexcept>
#include <string>

namespace entlab {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input (shapes, normalization, config fields).
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Input that is not well-formed JSON (or not the expected JSON shape).
class ParseError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Config object with a key the schema does not define.
class UnknownKeyError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values produced during a computation.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Exhaustive search would exceed its size guard.
class CapacityError : public Error {
 public:
  using Error::Error;
};

/// Operation applied to a task outside its supported class.
class ScopeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace entlab
