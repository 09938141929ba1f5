#pragma once

#include <stdexcept>
#include <string>

namespace laso {

/// Base for every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or precondition violation on user input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Persistence errors. Each kind is distinct so callers can tell a file that
// is not ours from one that was cut short or written by a newer build.
class FormatError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public Error {
 public:
  using Error::Error;
};

class VersionError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// SetExpr text could not be parsed.
class ParseError : public Error {
 public:
  using Error::Error;
};

}  // namespace laso
