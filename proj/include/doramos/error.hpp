#pragma once

#include <stdexcept>
#include <string>

namespace doramos {

// Base of every error raised by the library. The CLI maps the concrete
// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad arguments or incompatible shapes handed to an operation.
class UsageError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public UsageError {
 public:
  using UsageError::UsageError;
};

// Malformed or inconsistent input data (files, manifests, scores).
class DataError : public Error {
 public:
  using Error::Error;
};

class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedError : public DataError {
 public:
  using DataError::DataError;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values, singular systems, diverging training.
class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace doramos
