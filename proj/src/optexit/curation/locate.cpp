// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <mutex>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"
#include "optexit/curation/curation.hpp"

namespace optexit::curation {

void CurationConfig::validate() const {
  if (max_retries < 1) throw Error(ErrorCode::InvalidArgument, "max_retries must be >= 1");
  if (!(min_fuzzy_score > 0.0 && min_fuzzy_score <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "min_fuzzy_score must be in (0, 1]");
  }
  if (max_inflight < 1) throw Error(ErrorCode::InvalidArgument, "max_inflight must be >= 1");
}

FuzzyMatch fuzzy_match_span(std::string_view span, std::string_view text, double min_score) {
  if (span.empty()) throw Error(ErrorCode::InvalidArgument, "span is empty");
  if (const auto pos = text.find(span); pos != std::string_view::npos) {
    return FuzzyMatch{pos, pos + span.size(), 1.0};
  }
  const std::size_t len = span.size();
  const std::size_t slack = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(len)));
  const std::size_t min_w = len > slack ? std::max<std::size_t>(1, len - slack) : 1;
  const std::size_t max_w = len + slack;
  const std::size_t n = text.size();

  FuzzyMatch found;
  bool any = false;
  std::vector<std::size_t> prev(max_w + 1), cur(max_w + 1);
  for (std::size_t s = 0; s + min_w <= n; ++s) {
    const std::size_t width = std::min(max_w, n - s);
    const std::string_view window = text.substr(s, width);
    for (std::size_t j = 0; j <= width; ++j) prev[j] = j;
    for (std::size_t i = 1; i <= len; ++i) {
      cur[0] = i;
      for (std::size_t j = 1; j <= width; ++j) {
        cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (span[i - 1] == window[j - 1] ? 0 : 1)});
      }
      std::swap(prev, cur);
    }
    for (std::size_t w = min_w; w <= width; ++w) {
      const double score = 1.0 - static_cast<double>(prev[w]) / static_cast<double>(std::max(len, w));
      if (!any || score > found.score) {
        found = FuzzyMatch{s, s + w, score};
        any = true;
      }
    }
  }
  if (!any || found.score < min_score) throw BelowThreshold(any ? found.score : 0.0);
  return found;
}

std::size_t char_to_token(std::size_t char_pos, std::span<const TokenRecord> tokens) {
  if (tokens.empty()) throw Error(ErrorCode::OutOfRange, "no tokens");
  std::size_t start = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t end = start + tokens[i].token_text.size();
    if (char_pos >= start && char_pos < end) return i;
    start = end;
  }
  if (char_pos == start) return tokens.size() - 1;
  throw Error(ErrorCode::OutOfRange,
              "char " + std::to_string(char_pos) + " beyond decoded length " + std::to_string(start));
}

namespace {

std::string clean_span(std::string_view reply) {
  std::string s = trim(reply);
  while (s.size() >= 2 && (s.front() == '"' || s.front() == '\'' || s.front() == '`') && s.back() == s.front()) {
    s = trim(std::string_view(s).substr(1, s.size() - 2));
  }
  return s;
}

bool affirmative(std::string_view reply) {
  const std::string s = to_lower(trim(reply));
  return s.starts_with("yes") || s.starts_with("true");
}

}  // namespace

AnswerPosition locate_answer(const Trace& trace, const CurationConfig& config, llm::LlmClient& llm) {
  config.validate();
  if (!trace.final_answer || trace.final_answer->empty()) {
    throw Error(ErrorCode::InvalidArgument, trace.trace_id + ": final answer not set");
  }
  const std::string& answer = *trace.final_answer;
  const std::string cot = decoded_text(trace.cot_tokens);
  std::vector<std::string> rejected;
  std::string feedback;

  for (std::size_t attempt = 0; attempt < config.max_retries; ++attempt) {
    llm::LlmRequest identify;
    identify.role = llm::Role::identify;
    identify.user_prompt = identify_prompt(config.prompts, answer, cot, feedback);
    identify.max_tokens = config.max_tokens;
    const std::string span = clean_span(llm.complete(identify).text);

    bool ok = false;
    if (!span.empty()) {
      llm::LlmRequest verify;
      verify.role = llm::Role::verify;
      verify.user_prompt = verify_prompt(config.prompts, span, answer);
      verify.max_tokens = 16;
      ok = affirmative(llm.complete(verify).text);
    }
    if (!ok) {
      rejected.push_back(span);
      feedback += feedback_line(config.prompts, span);
      continue;
    }

    FuzzyMatch match;
    try {
      match = fuzzy_match_span(span, cot, config.min_fuzzy_score);
    } catch (const BelowThreshold& e) {
      throw Error(ErrorCode::SpanNotFound,
                  trace.trace_id + ": verified span not found in CoT (best score " + format_double(e.best_score()) + ")");
    }
    AnswerPosition pos;
    pos.trace_id = trace.trace_id;
    pos.span_text = span;
    pos.char_start = match.char_start;
    pos.char_end = match.char_end;
    pos.token_index = char_to_token(match.char_end, trace.cot_tokens);
    pos.verified = true;
    pos.retries_used = attempt;
    return pos;
  }
  throw RetriesExhausted(config.max_retries, std::move(rejected));
}

std::string CurationReport::csv() const {
  std::string out = "trace_id,status,retries_used,token_index\n";
  for (const auto& r : records) {
    out += csv_line({r.trace_id, r.status, std::to_string(r.retries_used),
                     r.token_index ? std::to_string(*r.token_index) : std::string()});
  }
  return out;
}

Dataset assemble_dataset(std::span<const Trace> traces, const CurationConfig& config, llm::LlmClient& llm,
                         CurationReport* report_out) {
  config.validate();
  if (traces.empty()) throw Error(ErrorCode::EmptyInput, "no traces to curate");

  struct Slot {
    CurationRecord record;
    std::optional<LabeledTrace> labeled;
    std::optional<std::string> transport_failure;
  };
  std::vector<Slot> slots(traces.size());
  parallel_for(traces.size(), config.max_inflight, [&](std::size_t i) {
    const Trace& source = traces[i];
    Slot& slot = slots[i];
    slot.record.trace_id = source.trace_id;
    try {
      Trace trace = source;
      trace.final_answer = trace.final_answer && !normalize_answer(*trace.final_answer).empty()
                               ? normalize_answer(*trace.final_answer)
                               : extract_answer(trace.solution_text, &llm, config.prompts);
      const AnswerPosition pos = locate_answer(trace, config, llm);
      slot.labeled = assign_labels(trace, pos, config.chat);
      slot.record.status = "ok";
      slot.record.retries_used = pos.retries_used;
      slot.record.token_index = pos.token_index;
    } catch (const RetriesExhausted& e) {
      slot.record.status = to_string(e.code());
      slot.record.retries_used = e.max_retries();
    } catch (const Error& e) {
      slot.record.status = to_string(e.code());
      if (e.category() == ErrorCategory::transport) slot.transport_failure = e.what();
    }
  });

  std::sort(slots.begin(), slots.end(),
            [](const Slot& a, const Slot& b) { return a.record.trace_id < b.record.trace_id; });
  Dataset out;
  for (auto& s : slots) {
    if (s.labeled) {
      out.labeled.push_back(std::move(*s.labeled));
      ++out.report.succeeded;
    }
    out.report.records.push_back(std::move(s.record));
  }
  if (report_out) *report_out = out.report;
  if (out.report.succeeded == 0) {
    const bool unreachable =
        std::all_of(slots.begin(), slots.end(), [](const Slot& s) { return s.transport_failure.has_value(); });
    if (unreachable) {
      throw Error(ErrorCode::Transport, "curation failed for all " + std::to_string(traces.size()) +
                                            " traces: " + *slots.front().transport_failure);
    }
    throw Error(ErrorCode::AllFailed, "curation failed for all " + std::to_string(traces.size()) + " traces");
  }
  return out;
}

}  // namespace optexit::curation
