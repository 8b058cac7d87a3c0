#pragma once

#include <stdexcept>
#include <string>

namespace crackseg {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or invalid geometry.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (bad hyperparameter, malformed config file, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// A call that violates an API contract (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite input is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Filesystem / decoding failures.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace crackseg
