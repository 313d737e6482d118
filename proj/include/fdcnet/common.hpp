#pragma once

#include <stdexcept>
#include <string>

namespace fdcnet {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape, dimension or bookkeeping mismatch between configured pieces.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed user input: manifests, config files, command-line values.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// A training-contract violation such as an unfrozen network where a frozen one is required.
class ContractError : public Error {
 public:
  using Error::Error;
};

inline constexpr double kNormEps = 1e-8;

}  // namespace fdcnet
