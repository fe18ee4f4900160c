#pragma once

#include <stdexcept>
#include <string>

namespace rotir {

/// Invalid configuration, shapes or arguments. Maps to CLI exit code 2.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// NaN/Inf or a degenerate numerical problem. Maps to CLI exit code 3.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input has no well-defined answer (empty match set, coincident points...).
class DegenerateError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace rotir
