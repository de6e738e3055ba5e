#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace hmix {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Mismatched tensor or label dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A value violates a type invariant. `field` names the offending field when known.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(field.empty() ? message : field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Same key submitted twice with a different payload.
class ConflictError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Malformed input file; `line` is 1-based.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error("line " + std::to_string(line) + ": " + message), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace hmix
