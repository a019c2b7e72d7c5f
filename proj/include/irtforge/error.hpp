#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace irtforge {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite input or a parameter outside its admissible range.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Shape or precondition mismatch between arguments.
class ContractError : public Error {
 public:
  using Error::Error;
};

// Structurally valid input with invalid content (duplicate ids, non-binary responses).
class FormatError : public Error {
 public:
  using Error::Error;
};

// Malformed input text. Line and column are 1-based; column 0 means unknown.
class ParseError : public FormatError {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what)
      : FormatError("line " + std::to_string(line) +
                    (column > 0 ? ", column " + std::to_string(column) : std::string()) + ": " +
                    what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class RegistrationError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

// Optimization failure. Carries the epoch (or EM iteration) at which it
// happened and the loss trace recorded up to that point.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& what, std::size_t epoch, std::vector<double> trace = {})
      : Error(what), epoch_(epoch), trace_(std::move(trace)) {}

  std::size_t epoch() const noexcept { return epoch_; }
  const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::size_t epoch_;
  std::vector<double> trace_;
};

}  // namespace irtforge
