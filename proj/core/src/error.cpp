#include "morphdose/error.hpp"

namespace morphdose {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidParameter: return "invalid parameter";
    case ErrorKind::Configuration: return "configuration error";
    case ErrorKind::UnparseablePain: return "unparseable pain score";
    case ErrorKind::EmptyEpisode: return "empty episode";
    case ErrorKind::InsufficientData: return "insufficient data";
    case ErrorKind::Dimension: return "dimension mismatch";
    case ErrorKind::NotReady: return "not ready";
    case ErrorKind::Internal: return "internal error";
    case ErrorKind::Numeric: return "numeric failure";
    case ErrorKind::Io: return "I/O error";
    case ErrorKind::Format: return "format error";
  }
  return "error";
}

}  // namespace morphdose
