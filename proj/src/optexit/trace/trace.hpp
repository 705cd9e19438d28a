// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace optexit {

/// One candidate in a position's top-K next-token distribution.
struct TopKEntry {
  std::int64_t token_id = 0;
  double logprob = 0.0;  // nats, <= 0

  bool operator==(const TopKEntry&) const = default;
};

struct TokenRecord {
  std::size_t index = 0;
  std::int64_t token_id = 0;
  std::string token_text;
  double chosen_logprob = 0.0;
  /// Sorted by logprob descending. The chosen token need not appear here.
  std::vector<TopKEntry> top_k;

  bool operator==(const TokenRecord&) const = default;
};

struct Trace {
  std::string trace_id;
  std::string prompt;
  std::string source;
  std::string model;
  std::size_t k = 20;
  std::string solution_text;
  std::optional<std::string> final_answer;
  std::vector<TokenRecord> cot_tokens;

  std::size_t length() const noexcept { return cot_tokens.size(); }

  bool operator==(const Trace&) const = default;
};

struct AnswerPosition {
  std::string trace_id;
  std::string span_text;
  std::size_t char_start = 0;
  std::size_t char_end = 0;
  std::size_t token_index = 0;
  bool verified = false;
  std::size_t retries_used = 0;

  bool operator==(const AnswerPosition&) const = default;
};

struct LabeledTrace {
  Trace trace;
  AnswerPosition answer;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> loss_mask;

  bool operator==(const LabeledTrace&) const = default;
};

/// Row-major M x D matrix of per-token feature vectors, stored as float.
struct FeatureMatrix {
  std::string trace_id;
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  std::span<const float> row(std::size_t r) const { return {values.data() + r * dim, dim}; }

  bool operator==(const FeatureMatrix&) const = default;
};

/// Think-region delimiters of the target model's chat format.
struct ChatTemplate {
  std::string think_open = "<think>";
  std::string think_close = "</think>";

  /// Throws TemplateError when a marker is missing.
  void validate() const;
};

/// Concatenated token_text of cot_tokens[0, count).
std::string decoded_text(std::span<const TokenRecord> tokens, std::size_t count);
std::string decoded_text(std::span<const TokenRecord> tokens);

bool is_marker(const TokenRecord& token, std::string_view marker);

/// Half-open token range strictly inside the think markers. Missing open
/// marker means the region starts at 0; missing close marker means it runs to M.
struct ThinkRegion {
  std::size_t begin = 0;
  std::size_t end = 0;
};
ThinkRegion think_region(std::span<const TokenRecord> tokens, const ChatTemplate& tmpl);

// --- trace / labeled files (JSON lines) ---------------------------------

std::vector<Trace> load_traces(const std::filesystem::path& path);
std::vector<Trace> parse_traces(std::string_view text);
std::string serialize_trace(const Trace& trace);
void save_traces(const std::filesystem::path& path, std::span<const Trace> traces);

std::vector<LabeledTrace> load_labeled(const std::filesystem::path& path);
std::vector<LabeledTrace> parse_labeled(std::string_view text);
std::string serialize_labeled(const LabeledTrace& labeled);
void save_labeled(const std::filesystem::path& path, std::span<const LabeledTrace> labeled);

/// Line records with at least trace_id and prompt; final_answer optional.
/// Accepts trace and labeled files as well.
struct PromptItem {
  std::string trace_id;
  std::string prompt;
  std::optional<std::string> final_answer;
  std::optional<std::size_t> reference_length;
};
std::vector<PromptItem> load_prompts(const std::filesystem::path& path);

// --- labels ------------------------------------------------------------

LabeledTrace assign_labels(const Trace& trace, const AnswerPosition& answer,
                           const ChatTemplate& tmpl = {});

/// Checks label and mask invariants; throws Error on violation.
void validate_labeled(const LabeledTrace& labeled);

// --- feature sidecar (OPTX) --------------------------------------------

inline constexpr char kSidecarMagic[4] = {'O', 'P', 'T', 'X'};
inline constexpr std::uint32_t kSidecarVersion = 1;

void write_sidecar(const std::filesystem::path& path, const FeatureMatrix& features);
/// Reads a sidecar without checking it against a trace.
FeatureMatrix read_sidecar(const std::filesystem::path& path);
FeatureMatrix attach_features(const Trace& trace, const std::filesystem::path& sidecar);
std::filesystem::path sidecar_path(const std::filesystem::path& dir, std::string_view trace_id);

}  // namespace optexit
