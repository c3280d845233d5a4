#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace nado {

enum class ErrorCode {
  kInvalidArgument,
  kMissingCondition,
  kInvalidState,
  kTooLarge,
  kInvalidPattern,
  kInfeasibleOracle,
  kInfeasiblePrefix,
  kInfeasibleSoftSpec,
  kInfeasibleGuidance,
  kNonFiniteLoss,
  kFormat,
};

std::string_view ToString(ErrorCode code);

// Every recoverable failure in the library surfaces as an Error carrying a
// machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ToString(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

#define NADO_CHECK(cond, code, msg)          \
  do {                                       \
    if (!(cond)) throw ::nado::Error((code), (msg)); \
  } while (0)

}  // namespace nado
