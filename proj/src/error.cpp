#include "nado/error.hpp"

namespace nado {

std::string_view ToString(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kMissingCondition: return "missing-condition";
    case ErrorCode::kInvalidState: return "invalid-state";
    case ErrorCode::kTooLarge: return "too-large-space";
    case ErrorCode::kInvalidPattern: return "invalid-pattern";
    case ErrorCode::kInfeasibleOracle: return "infeasible-oracle";
    case ErrorCode::kInfeasiblePrefix: return "infeasible-prefix";
    case ErrorCode::kInfeasibleSoftSpec: return "infeasible-soft-spec";
    case ErrorCode::kInfeasibleGuidance: return "infeasible-guidance";
    case ErrorCode::kNonFiniteLoss: return "non-finite-loss";
    case ErrorCode::kFormat: return "format";
  }
  return "unknown";
}

}  // namespace nado
