// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fexpr {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Malformed input text (JSON syntax, wrong field types).
class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string &what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

/// Well-formed input that violates a structural invariant.
class SchemaError : public Error {
public:
  using Error::Error;
};

class InsufficientFramesError : public Error {
public:
  using Error::Error;
};

class ConfigurationError : public Error {
public:
  using Error::Error;
};

/// Tensor shape or topology fingerprint mismatch.
class ShapeError : public Error {
public:
  using Error::Error;
};

/// A non-finite value appeared inside a numeric kernel.
class NumericError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace fexpr
