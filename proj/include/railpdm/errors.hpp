#pragma once

#include <stdexcept>
#include <string>

namespace railpdm {

/// Error categories shared by every module. The CLI maps them onto its exit
/// code contract (see cli.hpp).
enum class ErrorKind {
  parameter,
  validation,
  permission,
  auth,
  io,
  transport,
  reference,
  insufficient_data,
  size,
  indeterminate_direction,
  spec,
  verification,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Validation failure tied to one named input field.
class ValidationError : public Error {
 public:
  ValidationError(std::string field, const std::string& message)
      : Error(ErrorKind::validation, field + ": " + message),
        field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace railpdm
