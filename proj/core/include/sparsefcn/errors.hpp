#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sparsefcn {

// Base of every error the library throws. `kind()` is a stable short tag
// that the CLI prints as the machine-parsable part of its failure line.
class Error : public std::runtime_error {
 public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}
  const std::string& kind() const noexcept { return kind_; }

 private:
  std::string kind_;
};

// Bad shapes or out-of-range arguments handed to an operation.
class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error("parameter", what) {}
};

// Calling an operation in a context it does not support.
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error("usage", what) {}
};

// Graph construction rejected (missing taps, incompatible options, ...).
class ConstructionError : public Error {
 public:
  explicit ConstructionError(const std::string& what) : Error("construction", what) {}
};

// Malformed file content. `offset()` is the byte position of the problem.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : Error("parse", what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Numerical divergence during training; carries the failing iteration.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int iteration)
      : Error("divergence", what), iteration_(iteration) {}
  int iteration() const noexcept { return iteration_; }

 private:
  int iteration_;
};

// File-system level failures (missing files, unwritable paths).
class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

}  // namespace sparsefcn
