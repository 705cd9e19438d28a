// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "optexit/exit/controller.hpp"

namespace optexit::baselines {

using controller::ExitOutcome;
using controller::SolveOptions;

struct DeerConfig {
  std::size_t chunk_tokens = 64;
  double prob_threshold = 0.95;

  void validate() const;
};

/// Chunk-mean token probability detector.
class DeerDetector {
 public:
  explicit DeerDetector(const DeerConfig& config);

  /// Returns true when the chunk ending at this token clears the threshold.
  /// Throws MissingLogprobs.
  bool push(const TokenRecord& token);
  std::size_t tokens_seen() const noexcept { return seen_; }

 private:
  DeerConfig config_;
  std::size_t seen_ = 0;
  double chunk_sum_ = 0.0;
};

/// 0-based index of the last token of the first qualifying chunk.
std::optional<std::size_t> deer_exit(std::span<const TokenRecord> tokens, const DeerConfig& config);

inline constexpr const char* kDynasorProbePrompt =
    "Oh, I suddenly got the answer to the whole problem, Final Answer: \\boxed{";

struct DynasorConfig {
  std::size_t interval_tokens = 64;
  std::size_t consistency_w = 8;
  std::string probe_prompt = kDynasorProbePrompt;

  void validate() const;
};

/// Counts consecutive equal interim answers; empty answers reset the run.
class DynasorCounter {
 public:
  explicit DynasorCounter(std::size_t consistency_w) : w_(consistency_w) {}

  /// Returns true when the last w answers agree.
  bool push(std::string_view interim);
  std::size_t probes() const noexcept { return probes_; }

 private:
  std::size_t w_;
  std::size_t probes_ = 0;
  std::size_t run_ = 0;
  std::string last_;
};

/// 1-based probe number at which the policy exits, or nullopt.
std::optional<std::size_t> dynasor_decide(std::span<const std::string> interim, const DynasorConfig& config);

/// Interim answer of a probe continuation that started inside `\boxed{`.
std::string parse_interim(std::string_view response);

ExitOutcome vanilla(const Trace& trace);

ExitOutcome deer(const Trace& trace, const DeerConfig& config, const SolveOptions& options, llm::LlmClient& llm);

ExitOutcome dynasor(const Trace& trace, const DynasorConfig& config, const SolveOptions& options,
                    llm::LlmClient& llm);

/// Empty think block pre-filled. Throws TemplateError.
ExitOutcome nothinking(std::string_view trace_id, std::string_view prompt, std::optional<std::size_t> reference_m,
                       std::optional<std::string> reference_answer, const SolveOptions& options,
                       llm::LlmClient& llm);

}  // namespace optexit::baselines
