#include "actrev/error.hpp"

namespace actrev {

std::string_view error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::Io: return "io";
    case ErrorKind::Format: return "format";
    case ErrorKind::Config: return "config";
    case ErrorKind::GateFailure: return "gate-failure";
    case ErrorKind::Fingerprint: return "fingerprint";
    case ErrorKind::NotFound: return "not-found";
  }
  return "unknown";
}

}  // namespace actrev
