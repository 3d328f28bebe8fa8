#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fmpi {

enum class ErrorCode {
  kInvalidArgument,
  kDimension,
  kNumeric,
  kDegeneratePlane,
  kInvalidGrouping,
  kConfigMismatch,
  kFormat,
  kIo,
};

/// Stable lowercase identifier, used in CLI error lines.
std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] void fail(ErrorCode code, const std::string& message);

}  // namespace fmpi
