// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace optexit {

/// Coarse failure class; maps 1:1 onto CLI exit codes and C API status codes.
enum class ErrorCategory { usage, data, transport, internal };

enum class ErrorCode {
  // trace-model
  MissingFile,
  SchemaError,
  DuplicateTraceId,
  UnverifiedAnswer,
  IndexOutOfRange,
  EmptyLossMask,
  BadMagic,
  VersionMismatch,
  RowCountMismatch,
  NonFiniteValue,
  // llm-gateway
  Transport,
  Timeout,
  MalformedResponse,
  PortInUse,
  ScriptAmbiguity,
  NoScriptMatch,
  // analysis
  EmptyTopK,
  LengthMismatch,
  EmptyInput,
  TooFewPoints,
  // curation
  EmptySolution,
  LlmRefusal,
  RetriesExhausted,
  SpanNotFound,
  BelowThreshold,
  OutOfRange,
  AllFailed,
  // probe
  MissingClass,
  EmptyMask,
  NonFiniteLoss,
  Diverged,
  DimMismatch,
  // exit-controller / baselines
  SteppedAfterExit,
  FeatureUnavailable,
  MissingLogprobs,
  TemplateError,
  // reporting
  EmptyResults,
  MixedDatasets,
  // generic argument validation
  InvalidArgument,
  Io,
};

const char* to_string(ErrorCode code) noexcept;
ErrorCategory category_of(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }
  ErrorCategory category() const noexcept { return category_of(code_); }

 private:
  ErrorCode code_;
};

class SchemaError : public Error {
 public:
  SchemaError(std::size_t line, std::string field, const std::string& detail);

  std::size_t line() const noexcept { return line_; }
  const std::string& field() const noexcept { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

class RowCountMismatch : public Error {
 public:
  RowCountMismatch(std::size_t expected, std::size_t found);

  std::size_t expected() const noexcept { return expected_; }
  std::size_t found() const noexcept { return found_; }

 private:
  std::size_t expected_;
  std::size_t found_;
};

class NonFiniteValue : public Error {
 public:
  NonFiniteValue(std::size_t row, std::size_t col);

  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

/// HTTP-level failure. status is 0 when no response was received.
class TransportError : public Error {
 public:
  TransportError(ErrorCode code, int status, const std::string& message);

  int status() const noexcept { return status_; }

 private:
  int status_;
};

class RetriesExhausted : public Error {
 public:
  RetriesExhausted(std::size_t max_retries, std::vector<std::string> rejected_spans);

  std::size_t max_retries() const noexcept { return max_retries_; }
  const std::vector<std::string>& rejected_spans() const noexcept { return rejected_; }

 private:
  std::size_t max_retries_;
  std::vector<std::string> rejected_;
};

class BelowThreshold : public Error {
 public:
  explicit BelowThreshold(double best_score);

  double best_score() const noexcept { return best_score_; }

 private:
  double best_score_;
};

}  // namespace optexit
