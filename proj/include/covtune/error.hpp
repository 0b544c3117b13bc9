#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace covtune {

// Invalid input: bad dimensions, out-of-range tuning values, malformed data.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// The requested estimator family is not supported by an operation
// (for example SURE or the operator-norm approximation with thresholding).
class UnsupportedFamily : public DomainError {
 public:
  using DomainError::DomainError;
};

// An iterative numerical routine failed to converge.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, std::size_t iterations)
      : std::runtime_error(what + " (after " + std::to_string(iterations) + " iterations)"),
        iterations_(iterations) {}

  std::size_t iterations() const noexcept { return iterations_; }

 private:
  std::size_t iterations_;
};

// Text input that does not parse; line and column are 1-based.
class ParseError : public DomainError {
 public:
  ParseError(const std::string& what, std::size_t line, std::size_t column)
      : DomainError("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

}  // namespace covtune
