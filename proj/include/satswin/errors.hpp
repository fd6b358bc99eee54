// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "satswin/tensor.hpp"

SATSWIN_NAMESPACE_BEGIN

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor dimensions do not satisfy an operation's precondition.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Configuration rejected; carries every violation found, not only the first.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> violations);
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  std::vector<std::string> violations_;
};

/// Malformed or truncated file, unknown keys, bad magic.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Metric undefined for the accumulated data (e.g. empty confusion matrix).
class MetricError : public Error {
 public:
  using Error::Error;
};

SATSWIN_NAMESPACE_END
