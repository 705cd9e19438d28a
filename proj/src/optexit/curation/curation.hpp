// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "optexit/llm/client.hpp"
#include "optexit/trace/trace.hpp"

namespace optexit::curation {

/// Prompt templates for the extract / identify / verify calls. Placeholders
/// are `{solution}`, `{answer}`, `{cot}`, `{feedback}` and `{span}`.
struct PromptTemplates {
  std::string extract = "Extract the final answer from: {solution}";
  std::string identify = "Find first occurrence of {answer} in: {cot}{feedback}";
  std::string feedback = "\n Previous span {span} was incorrect, try again";
  std::string verify = "Does {span} contain {answer}?";
};

/// Reads a JSON object with any subset of the template keys.
PromptTemplates load_prompt_templates(const std::filesystem::path& path);

std::string extract_prompt(const PromptTemplates& t, std::string_view solution);
std::string identify_prompt(const PromptTemplates& t, std::string_view answer, std::string_view cot,
                            std::string_view feedback);
std::string feedback_line(const PromptTemplates& t, std::string_view rejected_span);
std::string verify_prompt(const PromptTemplates& t, std::string_view span, std::string_view answer);

struct CurationConfig {
  std::size_t max_retries = 4;
  double min_fuzzy_score = 0.9;
  std::size_t max_inflight = 8;
  int max_tokens = 512;
  PromptTemplates prompts;
  ChatTemplate chat;

  void validate() const;
};

/// Trim, collapse internal whitespace, strip trailing punctuation.
std::string normalize_answer(std::string_view answer);
bool answers_equal(std::string_view a, std::string_view b);

/// Contents of the last brace-balanced `\boxed{...}`; nullopt when absent or
/// unbalanced.
std::optional<std::string> parse_boxed(std::string_view text);

/// Local `\boxed{}` parse first; the LLM is consulted only when that fails.
/// Throws EmptySolution or LlmRefusal.
std::string extract_answer(std::string_view solution, llm::LlmClient* llm, const PromptTemplates& prompts = {});

/// Like extract_answer but returns an empty string instead of throwing.
std::string try_extract_answer(std::string_view solution, llm::LlmClient* llm,
                               const PromptTemplates& prompts = {});

struct FuzzyMatch {
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  double score = 0.0;
};

/// Best edit-distance alignment of `span` inside `text` among windows whose
/// length is within 20% of the span's. Exact occurrences score 1.0 and the
/// earliest wins. Throws BelowThreshold when the best score < min_score.
FuzzyMatch fuzzy_match_span(std::string_view span, std::string_view text, double min_score);

/// Index of the token whose [start, end) byte interval holds char_pos;
/// char_pos == total length maps to M-1.
std::size_t char_to_token(std::size_t char_pos, std::span<const TokenRecord> tokens);

/// Identify/verify loop with textual feedback, then fuzzy location and
/// char->token conversion. Requires trace.final_answer.
AnswerPosition locate_answer(const Trace& trace, const CurationConfig& config, llm::LlmClient& llm);

struct CurationRecord {
  std::string trace_id;
  std::string status;  // "ok" or an error code name
  std::size_t retries_used = 0;
  std::optional<std::size_t> token_index;
};

struct CurationReport {
  std::vector<CurationRecord> records;  // sorted by trace_id
  std::size_t succeeded = 0;

  double success_rate() const {
    return records.empty() ? 0.0 : static_cast<double>(succeeded) / static_cast<double>(records.size());
  }
  std::string csv() const;
};

struct Dataset {
  std::vector<LabeledTrace> labeled;  // sorted by trace_id
  CurationReport report;
};

/// Per-trace extract -> locate -> label with bounded concurrency. Failed
/// traces are dropped and recorded; throws AllFailed when none succeed, after
/// copying the report into `report_out` when given.
Dataset assemble_dataset(std::span<const Trace> traces, const CurationConfig& config, llm::LlmClient& llm,
                         CurationReport* report_out = nullptr);

}  // namespace optexit::curation
