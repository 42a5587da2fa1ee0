#pragma once

#include <stdexcept>
#include <string>

namespace afp {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, zero-norm vectors, solver non-convergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data (foreign tokens, all-pad rows, ...).
class DataError : public Error {
 public:
  using Error::Error;
};

class LengthError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// A checkpoint or other artifact failed validation (bad magic, truncation).
class CorruptArtifact : public Error {
 public:
  using Error::Error;
};

/// Raised by the optimizer or training loop when values go non-finite.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace afp
