#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ultragcn {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad or inconsistent configuration (flags, config file, hyperparameters).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Input data that cannot be ingested or is structurally inconsistent.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

// A function evaluated outside the set where it is defined.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or other numeric breakdowns during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace ultragcn
