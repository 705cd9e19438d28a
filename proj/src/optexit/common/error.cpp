// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include "optexit/common/error.hpp"

#include <sstream>
#include <utility>

namespace optexit {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::MissingFile: return "MissingFile";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::DuplicateTraceId: return "DuplicateTraceId";
    case ErrorCode::UnverifiedAnswer: return "UnverifiedAnswer";
    case ErrorCode::IndexOutOfRange: return "IndexOutOfRange";
    case ErrorCode::EmptyLossMask: return "EmptyLossMask";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::VersionMismatch: return "VersionMismatch";
    case ErrorCode::RowCountMismatch: return "RowCountMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::Transport: return "Transport";
    case ErrorCode::Timeout: return "Timeout";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::PortInUse: return "PortInUse";
    case ErrorCode::ScriptAmbiguity: return "ScriptAmbiguity";
    case ErrorCode::NoScriptMatch: return "NoScriptMatch";
    case ErrorCode::EmptyTopK: return "EmptyTopK";
    case ErrorCode::LengthMismatch: return "LengthMismatch";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::EmptySolution: return "EmptySolution";
    case ErrorCode::LlmRefusal: return "LlmRefusal";
    case ErrorCode::RetriesExhausted: return "RetriesExhausted";
    case ErrorCode::SpanNotFound: return "SpanNotFound";
    case ErrorCode::BelowThreshold: return "BelowThreshold";
    case ErrorCode::OutOfRange: return "OutOfRange";
    case ErrorCode::AllFailed: return "AllFailed";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::EmptyMask: return "EmptyMask";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::DimMismatch: return "DimMismatch";
    case ErrorCode::SteppedAfterExit: return "SteppedAfterExit";
    case ErrorCode::FeatureUnavailable: return "FeatureUnavailable";
    case ErrorCode::MissingLogprobs: return "MissingLogprobs";
    case ErrorCode::TemplateError: return "TemplateError";
    case ErrorCode::EmptyResults: return "EmptyResults";
    case ErrorCode::MixedDatasets: return "MixedDatasets";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
  }
  return "Unknown";
}

ErrorCategory category_of(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Transport:
    case ErrorCode::Timeout:
    case ErrorCode::MalformedResponse:
    case ErrorCode::PortInUse:
      return ErrorCategory::transport;
    case ErrorCode::InvalidArgument:
    case ErrorCode::TemplateError:
    case ErrorCode::FeatureUnavailable:
      return ErrorCategory::usage;
    case ErrorCode::SteppedAfterExit:
      return ErrorCategory::internal;
    default:
      return ErrorCategory::data;
  }
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

namespace {

std::string schema_message(std::size_t line, const std::string& field, const std::string& detail) {
  std::ostringstream os;
  os << "line " << line << ", field '" << field << "': " << detail;
  return os.str();
}

}  // namespace

SchemaError::SchemaError(std::size_t line, std::string field, const std::string& detail)
    : Error(ErrorCode::SchemaError, schema_message(line, field, detail)),
      line_(line),
      field_(std::move(field)) {}

RowCountMismatch::RowCountMismatch(std::size_t expected, std::size_t found)
    : Error(ErrorCode::RowCountMismatch,
            "expected " + std::to_string(expected) + " rows, found " + std::to_string(found)),
      expected_(expected),
      found_(found) {}

NonFiniteValue::NonFiniteValue(std::size_t row, std::size_t col)
    : Error(ErrorCode::NonFiniteValue,
            "row " + std::to_string(row) + ", col " + std::to_string(col)),
      row_(row),
      col_(col) {}

TransportError::TransportError(ErrorCode code, int status, const std::string& message)
    : Error(code, message + (status ? " (HTTP " + std::to_string(status) + ")" : std::string())),
      status_(status) {}

RetriesExhausted::RetriesExhausted(std::size_t max_retries, std::vector<std::string> rejected_spans)
    : Error(ErrorCode::RetriesExhausted,
            "no verified span after " + std::to_string(max_retries) + " attempts"),
      max_retries_(max_retries),
      rejected_(std::move(rejected_spans)) {}

BelowThreshold::BelowThreshold(double best_score)
    : Error(ErrorCode::BelowThreshold, "best fuzzy score " + std::to_string(best_score)),
      best_score_(best_score) {}

}  // namespace optexit
