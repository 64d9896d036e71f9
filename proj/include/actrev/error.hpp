#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace actrev {

// Categories are stable strings; the CLI prints them for machine consumption.
enum class ErrorKind {
  InvalidArgument,
  ShapeMismatch,
  Io,
  Format,
  Config,
  GateFailure,
  Fingerprint,
  NotFound,
};

std::string_view error_kind_name(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace actrev
