#include "deca/error.hpp"

namespace deca {

const char* to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Numeric: return "numeric";
    case ErrorKind::Config: return "config";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::Geometry: return "geometry";
    case ErrorKind::Data: return "data";
    case ErrorKind::Io: return "io";
    case ErrorKind::TruncatedBlob: return "truncated_blob";
    case ErrorKind::VersionMismatch: return "version_mismatch";
    case ErrorKind::ShapeMismatch: return "shape_mismatch";
  }
  return "unknown";
}

}  // namespace deca
