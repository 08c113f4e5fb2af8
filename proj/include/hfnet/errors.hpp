#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hfnet {

/// Base for every error raised by the library. The CLI maps subclasses onto
/// process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand extents do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// API misuse: wrong call sequence, missing metadata, non-scalar loss.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// A scalar hyper-parameter is out of its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Labels or samples violate their documented domain.
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf encountered where finite values are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid model/train/dataset configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Malformed binary container. Carries the byte offset where decoding failed.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : Error(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

  std::uint64_t offset() const noexcept { return offset_; }

 private:
  std::uint64_t offset_;
};

}  // namespace hfnet
