#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dsnet {

class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape, channel, or index mismatches in tensor operations.
class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// Invalid network / training configuration.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Dataset files missing, truncated, or containing invalid records.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error(msg) {}
};

// Checkpoint format violations: bad magic, version, truncation, shape mismatch.
class CheckpointError : public Error {
 public:
  explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

// Autograd misuse: backward on a consumed graph, backward on a non-scalar.
class AutogradError : public Error {
 public:
  explicit AutogradError(const std::string& msg) : Error(msg) {}
};

// Training-loop failures (non-finite loss, unwritable output directory).
class TrainError : public Error {
 public:
  explicit TrainError(const std::string& msg) : Error(msg) {}
};

// Dense 4-D extent: batch, channels, rows, cols. All dimensions >= 1.
struct Shape {
  std::int64_t n = 0;
  std::int64_t c = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  constexpr Shape() = default;
  constexpr Shape(std::int64_t n_, std::int64_t c_, std::int64_t h_, std::int64_t w_)
      : n(n_), c(c_), h(h_), w(w_) {}

  std::int64_t numel() const { return n * c * h * w; }

  bool operator==(const Shape& o) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

inline void check_shape_valid(const Shape& s) {
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1) {
    throw ShapeError("invalid tensor shape " + s.str() + ": all dimensions must be >= 1");
  }
}

}  // namespace dsnet
