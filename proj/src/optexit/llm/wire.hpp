// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

// Encoding of the OpenAI chat-completions subset shared by the HTTP client
// and the mock server.

#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "optexit/llm/client.hpp"

namespace optexit::llm::wire {

inline constexpr const char* kChatPath = "/v1/chat/completions";
inline constexpr const char* kRoleHeader = "x-optexit-role";
inline constexpr const char* kTruncationHeader = "x-optexit-truncation-index";

std::string encode_request(const LlmRequest& request, std::string_view model, bool stream);

/// Server-side view of a request.
struct ParsedRequest {
  Role role = Role::generate;
  std::string model;
  std::string system_prompt;
  std::string user_prompt;
  std::optional<std::string> assistant_prefix;
  std::optional<std::size_t> truncation_index;
  int max_tokens = 0;
  bool stream = false;
  bool logprobs = false;
  int top_logprobs = 0;
};

/// role/truncation come from headers; empty strings mean "absent".
ParsedRequest decode_request(std::string_view body, std::string_view role_header,
                             std::string_view truncation_header);

/// Full (non-streaming) response body.
std::string encode_completion(const Completion& completion, std::string_view id,
                              std::string_view model, bool with_logprobs, int top_logprobs);
Completion decode_completion(std::string_view body, bool want_logprobs);

/// One `data: ...\n\n` event per token followed by a finish event and [DONE].
std::vector<std::string> encode_stream(const Completion& completion, std::string_view id,
                                       std::string_view model, bool with_logprobs,
                                       int top_logprobs);

/// Incremental SSE decoder for streamed chunks.
class StreamDecoder {
 public:
  explicit StreamDecoder(bool want_logprobs) : want_logprobs_(want_logprobs) {}

  /// Feeds raw bytes; emits each decoded token through `sink` (which may
  /// return false to abort). Returns false when the sink aborted.
  bool feed(std::string_view bytes, const TokenConsumer& sink);

  bool done() const noexcept { return done_; }
  std::optional<FinishReason> finish_reason() const noexcept { return finish_; }
  std::string text() const { return text_; }
  std::vector<TokenRecord> tokens() const { return tokens_; }
  std::size_t token_count() const noexcept { return next_index_; }

 private:
  bool handle_event(std::string_view data, const TokenConsumer& sink);

  bool want_logprobs_;
  bool done_ = false;
  std::string buffer_;
  std::string text_;
  std::vector<TokenRecord> tokens_;
  std::size_t next_index_ = 0;
  std::optional<FinishReason> finish_;
};

}  // namespace optexit::llm::wire
