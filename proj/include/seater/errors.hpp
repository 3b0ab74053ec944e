#pragma once

#include <stdexcept>
#include <string>

namespace seater {

// File/parse problems (CLI exit code 2).
class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments, inconsistent configs, violated preconditions (CLI exit code 1).
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf produced by a numeric op, or divergence during training.
class NumericError : public std::runtime_error {
 public:
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace seater
