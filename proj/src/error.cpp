#include "sceneqa/error.hpp"

namespace sceneqa {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kUnknownTag: return "UnknownTag";
    case ErrorCode::kDuplicateTag: return "DuplicateTag";
    case ErrorCode::kMalformedSegment: return "MalformedSegment";
    case ErrorCode::kMissingField: return "MissingField";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kSchemaError: return "SchemaError";
    case ErrorCode::kWrongDimension: return "WrongDimension";
    case ErrorCode::kEndpointUnreachable: return "EndpointUnreachable";
    case ErrorCode::kTimeout: return "Timeout";
    case ErrorCode::kMalformedResponse: return "MalformedResponse";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kMixedComponentSets: return "MixedComponentSets";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kIdMismatch: return "IdMismatch";
    case ErrorCode::kValidationError: return "ValidationError";
    case ErrorCode::kUnknownCommand: return "UnknownCommand";
    case ErrorCode::kConfigError: return "ConfigError";
  }
  return "Unknown";
}

}  // namespace sceneqa
