#pragma once

#include <stdexcept>
#include <string>

namespace mtdagger {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class OutOfRange : public Error {
 public:
  using Error::Error;
};

/// N * min_per_task exceeds the round budget.
class InfeasibleBudget : public Error {
 public:
  using Error::Error;
};

class EmptyTaskData : public Error {
 public:
  using Error::Error;
};

class EmptyDataset : public Error {
 public:
  using Error::Error;
};

class UnknownTask : public Error {
 public:
  using Error::Error;
};

/// A generated expert failed the closed-loop validation after all retries.
class ExpertInvalid : public Error {
 public:
  using Error::Error;
};

/// Malformed config text. `line` is 1-based, 0 when unknown.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, int line)
      : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

/// A config parsed fine but violates an invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mtdagger
