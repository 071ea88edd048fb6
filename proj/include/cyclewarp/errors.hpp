#pragma once

#include <stdexcept>
#include <string>

namespace cyclewarp {

// Caller passed inconsistent shapes or out-of-domain arguments.
class MisuseError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// No valid evidence left to compute a loss or metric (empty mask, zero
// jointly valid pixels), or an optimization diverged.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The synthetic generator could not produce a usable scene.
class DegenerateSceneError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cyclewarp
