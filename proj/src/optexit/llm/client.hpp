// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <chrono>
#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "optexit/common/util.hpp"
#include "optexit/trace/trace.hpp"

namespace optexit::llm {

/// Which pipeline stage issued a request. Sent on the wire as the
/// `x-optexit-role` header.
enum class Role { generate, extract, identify, verify, solve_after_truncation };

const char* to_string(Role role) noexcept;
Role role_from_string(std::string_view s);

struct LlmRequest {
  Role role = Role::generate;
  std::string system_prompt;
  std::string user_prompt;
  /// Partial assistant turn the model must continue (truncated CoT plus
  /// injected markers). Absent for fresh generations.
  std::optional<std::string> assistant_prefix;
  /// Number of CoT tokens kept in assistant_prefix; sent as
  /// `x-optexit-truncation-index`.
  std::optional<std::size_t> truncation_index;
  int max_tokens = 1024;
  double temperature = 0.0;
  bool want_logprobs = false;
  int top_logprobs = 0;

  /// Throws InvalidArgument on violated invariants.
  void validate() const;
};

enum class FinishReason { stop, length, aborted };

const char* to_string(FinishReason reason) noexcept;

struct Completion {
  std::string text;
  std::vector<TokenRecord> tokens;  // present iff want_logprobs
  FinishReason finish_reason = FinishReason::stop;
  std::size_t completion_tokens = 0;
};

/// Returns false to abort generation.
using TokenConsumer = std::function<bool(const TokenRecord&)>;

class LlmClient {
 public:
  virtual ~LlmClient() = default;

  virtual Completion complete(const LlmRequest& request) = 0;
  /// Invokes on_token once per generated token, in order. Tokens carry
  /// logprobs only when requested.
  virtual Completion stream(const LlmRequest& request, const TokenConsumer& on_token) = 0;
};

struct RetryPolicy {
  int max_retries = 3;
  std::chrono::milliseconds base_delay{250};
  double factor = 2.0;
};

struct EndpointConfig {
  /// Base URL, e.g. http://127.0.0.1:8000 or https://host/v1.
  std::string url;
  std::string model = "default";
  /// Bearer token; empty means no Authorization header.
  std::string api_key;
  std::chrono::milliseconds timeout{120000};
  RetryPolicy retry;
  std::size_t max_inflight = 8;
};

/// Reads OPTEXIT_API_KEY; empty when unset.
std::string api_key_from_env();

/// OpenAI-compatible /v1/chat/completions client. Safe for concurrent use.
class HttpLlmClient final : public LlmClient {
 public:
  explicit HttpLlmClient(EndpointConfig config);
  ~HttpLlmClient() override;

  Completion complete(const LlmRequest& request) override;
  Completion stream(const LlmRequest& request, const TokenConsumer& on_token) override;

  const EndpointConfig& config() const noexcept { return config_; }

 private:
  struct Target;

  EndpointConfig config_;
  std::unique_ptr<Target> target_;
  InflightLimiter limiter_;
};

}  // namespace optexit::llm
