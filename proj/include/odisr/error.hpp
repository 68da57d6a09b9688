// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace odisr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or extent mismatch.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameter, flag, or configuration value.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Coordinate outside its valid domain.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite value, singular Jacobian, or similar numeric failure.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed file (bad magic, version, or encoding).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// File is well-formed but incomplete or corrupted.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Filesystem or codec failure.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace odisr
