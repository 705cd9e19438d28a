// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "optexit/llm/client.hpp"
#include "optexit/llm/wire.hpp"

namespace optexit::llm {

/// One scripted reply. `prompt_sha256` is the SHA-256 (lowercase hex) of the
/// request's user message. An `answer_from_index` rule only matches requests
/// that carry a truncation index t, and replies with `response_text` when
/// t >= answer_from_index, else with `fallback_text`.
struct MockEntry {
  Role role = Role::generate;
  std::optional<std::string> prompt_sha256;
  std::optional<std::size_t> answer_from_index;
  std::string response_text;
  std::optional<std::vector<TokenRecord>> response_tokens;
  std::string fallback_text = "I need to keep thinking before I can answer.";
};

class MockScript {
 public:
  MockScript() = default;
  /// Throws ScriptAmbiguity when two entries could match the same request.
  explicit MockScript(std::vector<MockEntry> entries);

  static MockScript load(const std::filesystem::path& path);
  static MockScript parse(std::string_view jsonl);
  std::string serialize() const;

  const std::vector<MockEntry>& entries() const noexcept { return entries_; }
  /// First match in declared order, or nullptr.
  const MockEntry* match(Role role, std::string_view user_prompt,
                         std::optional<std::size_t> truncation_index) const;

 private:
  std::vector<MockEntry> entries_;
};

/// Deterministic reply generator: a pure function of (script, request).
class MockEngine {
 public:
  explicit MockEngine(MockScript script) : script_(std::move(script)) {}

  /// Completion with tokens always populated (logprobs are attached by the
  /// caller only when requested). Throws NoScriptMatch.
  Completion respond(const wire::ParsedRequest& request) const;

  const MockScript& script() const noexcept { return script_; }

 private:
  MockScript script_;
};

/// Splits text into tokens: think markers stand alone, everything else is a
/// whitespace run followed by a non-whitespace run. Lossless.
std::vector<std::string> mock_tokenize(std::string_view text);

/// In-process client backed by a MockEngine; no sockets involved.
class MockLlmClient final : public LlmClient {
 public:
  explicit MockLlmClient(MockScript script) : engine_(std::move(script)) {}

  Completion complete(const LlmRequest& request) override;
  Completion stream(const LlmRequest& request, const TokenConsumer& on_token) override;

  std::vector<LlmRequest> requests() const;
  std::size_t request_count() const;

 private:
  wire::ParsedRequest to_parsed(const LlmRequest& request, bool stream);
  Completion strip(Completion c, bool want_logprobs, int top_logprobs) const;

  MockEngine engine_;
  mutable std::mutex mu_;
  std::vector<LlmRequest> log_;
};

/// HTTP server speaking the chat-completions subset, replying per script.
class MockServer {
 public:
  /// port 0 binds an ephemeral port. Throws PortInUse when binding fails.
  MockServer(MockScript script, const std::string& host, int port);
  ~MockServer();
  MockServer(const MockServer&) = delete;
  MockServer& operator=(const MockServer&) = delete;

  int port() const noexcept { return port_; }
  std::string url() const;
  std::size_t request_count() const noexcept { return requests_.load(); }
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string host_;
  int port_ = 0;
  std::atomic<std::size_t> requests_{0};
  std::thread thread_;
};

}  // namespace optexit::llm
