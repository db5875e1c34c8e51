#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hola {

// Shape or dimension mismatch between tensors.
struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad ratios, divisibility violations, degenerate
// geometry, unusable option values.
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed on-disk container. `offset` is the byte position at which
// parsing failed.
struct FormatError : std::runtime_error {
  FormatError(const std::string& msg, std::uint64_t at)
      : std::runtime_error(msg + " (byte offset " + std::to_string(at) + ")"),
        offset(at) {}
  std::uint64_t offset;
};

// Empty, truncated, or otherwise unusable input data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Metric undefined for the given inputs (e.g. single-class AUC or UAR).
struct MetricError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values or failed numeric evaluation.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace hola
