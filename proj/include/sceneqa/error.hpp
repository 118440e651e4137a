#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sceneqa {

enum class ErrorCode {
  kUnknownTag,
  kDuplicateTag,
  kMalformedSegment,
  kMissingField,
  kInvalidArgument,
  kIoError,
  kSchemaError,
  kWrongDimension,
  kEndpointUnreachable,
  kTimeout,
  kMalformedResponse,
  kDimensionMismatch,
  kMixedComponentSets,
  kEmptyInput,
  kIdMismatch,
  kValidationError,
  kUnknownCommand,
  kConfigError,
};

std::string_view to_string(ErrorCode code);

// Every failure surfaced by the library. `detail` carries diagnostics that
// are too long for the message (for gateway errors, the rendered prompt).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string detail = {})
      : std::runtime_error(message), code_(code), detail_(std::move(detail)) {}

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace sceneqa
