#include "compact_sdf/error.hpp"

namespace csdf {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kParse: return "parse error";
    case ErrorCode::kNonWatertight: return "non-watertight mesh";
    case ErrorCode::kDegenerate: return "degenerate triangle";
    case ErrorCode::kOutOfDomain: return "point outside domain";
    case ErrorCode::kUnknownShape: return "unknown shape id";
    case ErrorCode::kDiverged: return "diverged";
    case ErrorCode::kEmpty: return "empty input";
  }
  return "unknown error";
}

}  // namespace csdf
