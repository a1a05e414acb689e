#pragma once

#include <stdexcept>
#include <string>

namespace ctap {

enum class ErrorKind {
  InvalidArgument,
  Decode,
  Parse,
  Config,
  Io,
  MissingModel,
  Numeric,
  Data,
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::Decode: return "decode";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Config: return "config";
    case ErrorKind::Io: return "io";
    case ErrorKind::MissingModel: return "missing-model";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Data: return "data";
  }
  return "unknown";
}

/// Every failure raised by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Binary container decode failure (bad magic, truncation, overflow).
class DecodeError : public Error {
 public:
  explicit DecodeError(const std::string& message)
      : Error(ErrorKind::Decode, message) {}
};

/// Text record parse failure; carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& message)
      : Error(ErrorKind::Parse,
              "line " + std::to_string(line) + ": " + message),
        line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

}  // namespace ctap
