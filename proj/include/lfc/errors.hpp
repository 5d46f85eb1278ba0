#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace lfc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor or light-field extents that do not fit the requested operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Patch origin/size not on a macro-pixel boundary.
class AlignmentError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Backward requested without a recorded forward, and similar misuse.
class StateError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Malformed file structure (bad magic, unsupported version, bad manifest).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Corrupt or truncated coded data. `position` is the byte offset where the
// problem was detected, relative to the start of the stream being decoded.
class DecodeError : public Error {
 public:
  DecodeError(const std::string& what, std::size_t position)
      : Error(what + " (at byte " + std::to_string(position) + ")"), position_(position) {}
  std::size_t position() const { return position_; }

 private:
  std::size_t position_;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace lfc
