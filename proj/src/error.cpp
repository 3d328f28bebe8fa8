#include "fmpi/error.hpp"

namespace fmpi {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kDimension: return "dimension";
    case ErrorCode::kNumeric: return "numeric";
    case ErrorCode::kDegeneratePlane: return "degenerate_plane";
    case ErrorCode::kInvalidGrouping: return "invalid_grouping";
    case ErrorCode::kConfigMismatch: return "config_mismatch";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kIo: return "io";
  }
  return "unknown";
}

void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

}  // namespace fmpi
