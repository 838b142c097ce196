#pragma once

#include <stdexcept>
#include <string>

namespace stepsmith {

// Exit codes used by the command-line front end.
enum class ExitCode : int {
  Ok = 0,
  Usage = 1,
  Data = 2,
  Numeric = 3,
};

class Error : public std::runtime_error {
 public:
  Error(ExitCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ExitCode code() const noexcept { return code_; }

 private:
  ExitCode code_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ExitCode::Usage, what) {}
};

// Malformed or inconsistent input data: simfiles, WAV files, caches, checkpoints.
class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ExitCode::Data, what) {}
};

class ParseError : public DataError {
 public:
  ParseError(int line, const std::string& what)
      : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}
  int line() const noexcept { return line_; }

 private:
  int line_;
};

// Non-finite values, degenerate inputs to estimators, diverging training.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ExitCode::Numeric, what) {}
};

}  // namespace stepsmith
