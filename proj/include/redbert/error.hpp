#pragma once

#include <stdexcept>
#include <string>

namespace redbert {

// Base class for every error raised by the library. The CLI maps
// ConfigError to a usage exit code and everything else to a run failure.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

// Misuse of an API contract (e.g. backward on a non-scalar).
class ContractError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Training diverged or otherwise failed mid-run.
class RunError : public Error {
 public:
  using Error::Error;
};

}  // namespace redbert
