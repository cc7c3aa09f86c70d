#pragma once

#include <stdexcept>
#include <string>

namespace irmlab {

// Bad user-supplied configuration: flags, config files, missing inputs.
// The CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor shape mismatches and index-out-of-range conditions.
struct DimensionError : std::invalid_argument {
  explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

// NaN/Inf escaping an operation, autodiff misuse (double backward,
// non-scalar loss, detached nodes).
struct NumericsError : std::runtime_error {
  explicit NumericsError(const std::string& msg) : std::runtime_error(msg) {}
};

// Unreadable, corrupt or truncated files (checkpoints, corpora, traces).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Optimization blew up (loss far above its starting point) or gradients
// went non-finite.
struct TrainingError : std::runtime_error {
  explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace irmlab
