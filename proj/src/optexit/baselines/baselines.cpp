// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include "optexit/baselines/baselines.hpp"

#include <cmath>

#include "optexit/common/error.hpp"
#include "optexit/curation/curation.hpp"

namespace optexit::baselines {

void DeerConfig::validate() const {
  if (chunk_tokens < 1) throw Error(ErrorCode::InvalidArgument, "chunk_tokens must be >= 1");
  if (!(prob_threshold > 0.0 && prob_threshold < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "DEER threshold must be in (0, 1)");
  }
}

DeerDetector::DeerDetector(const DeerConfig& config) : config_(config) { config_.validate(); }

bool DeerDetector::push(const TokenRecord& token) {
  if (token.top_k.empty() || !std::isfinite(token.chosen_logprob)) {
    throw Error(ErrorCode::MissingLogprobs, "token " + std::to_string(token.index) + " carries no logprobs");
  }
  chunk_sum_ += std::exp(token.chosen_logprob);
  ++seen_;
  if (seen_ % config_.chunk_tokens != 0) return false;
  const double mean = chunk_sum_ / static_cast<double>(config_.chunk_tokens);
  chunk_sum_ = 0.0;
  return mean > config_.prob_threshold;
}

std::optional<std::size_t> deer_exit(std::span<const TokenRecord> tokens, const DeerConfig& config) {
  DeerDetector d(config);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (d.push(tokens[i])) return i;
  }
  return std::nullopt;
}

void DynasorConfig::validate() const {
  if (interval_tokens < 1) throw Error(ErrorCode::InvalidArgument, "interval_tokens must be >= 1");
  if (consistency_w < 2) throw Error(ErrorCode::InvalidArgument, "consistency_w must be >= 2");
}

bool DynasorCounter::push(std::string_view interim) {
  ++probes_;
  const std::string a = curation::normalize_answer(interim);
  if (a.empty()) {
    run_ = 0;
    last_.clear();
    return false;
  }
  run_ = (run_ > 0 && a == last_) ? run_ + 1 : 1;
  last_ = a;
  return run_ >= w_;
}

std::optional<std::size_t> dynasor_decide(std::span<const std::string> interim, const DynasorConfig& config) {
  config.validate();
  DynasorCounter c(config.consistency_w);
  for (const auto& a : interim) {
    if (c.push(a)) return c.probes();
  }
  return std::nullopt;
}

std::string parse_interim(std::string_view response) {
  if (auto inside = curation::parse_boxed("\\boxed{" + std::string(response))) {
    return curation::normalize_answer(*inside);
  }
  if (auto last = curation::parse_boxed(response)) return curation::normalize_answer(*last);
  return {};
}

namespace {

ExitOutcome base(const Trace& trace, const char* policy) {
  ExitOutcome o;
  o.trace_id = trace.trace_id;
  o.policy = policy;
  o.m = trace.length();
  o.full_run_answer = trace.final_answer.value_or("");
  return o;
}

ExitOutcome truncated(ExitOutcome o, const Trace& trace, std::size_t keep, const SolveOptions& options,
                      llm::LlmClient& llm) {
  o.exited = true;
  o.m_early = keep;
  o.cr = controller::compression_rate(keep, o.m);
  o.solution_text = controller::solve_truncated(llm, trace.prompt, trace.cot_tokens, keep, options).text;
  o.answer = controller::answer_from_solution(o.solution_text, options.pipeline);
  o.matched_full_run_answer = curation::answers_equal(o.answer, o.full_run_answer);
  return o;
}

}  // namespace

ExitOutcome vanilla(const Trace& trace) {
  ExitOutcome o = base(trace, "vanilla");
  o.m_early = o.m;
  o.cr = 1.0;
  o.solution_text = trace.solution_text;
  o.answer = o.full_run_answer;
  o.matched_full_run_answer = !o.answer.empty();
  return o;
}

ExitOutcome deer(const Trace& trace, const DeerConfig& config, const SolveOptions& options, llm::LlmClient& llm) {
  const auto idx = deer_exit(trace.cot_tokens, config);
  if (!idx || *idx + 1 >= trace.length()) {
    ExitOutcome o = vanilla(trace);
    o.policy = "deer";
    return o;
  }
  return truncated(base(trace, "deer"), trace, *idx + 1, options, llm);
}

ExitOutcome dynasor(const Trace& trace, const DynasorConfig& config, const SolveOptions& options,
                    llm::LlmClient& llm) {
  config.validate();
  DynasorCounter counter(config.consistency_w);
  for (std::size_t keep = config.interval_tokens; keep < trace.length(); keep += config.interval_tokens) {
    llm::LlmRequest req;
    req.role = llm::Role::solve_after_truncation;
    req.user_prompt = trace.prompt;
    req.assistant_prefix = decoded_text(trace.cot_tokens, keep) + config.probe_prompt;
    req.truncation_index = keep;
    req.max_tokens = 64;
    if (counter.push(parse_interim(llm.complete(req).text))) {
      return truncated(base(trace, "dynasor"), trace, keep, options, llm);
    }
  }
  ExitOutcome o = vanilla(trace);
  o.policy = "dynasor";
  return o;
}

ExitOutcome nothinking(std::string_view trace_id, std::string_view prompt, std::optional<std::size_t> reference_m,
                       std::optional<std::string> reference_answer, const SolveOptions& options,
                       llm::LlmClient& llm) {
  options.chat.validate();
  llm::LlmRequest req;
  req.role = llm::Role::generate;
  req.user_prompt = std::string(prompt);
  req.assistant_prefix = options.chat.think_open + "\n\n" + options.chat.think_close + "\n";
  req.max_tokens = options.max_tokens;
  ExitOutcome o;
  o.trace_id = std::string(trace_id);
  o.policy = "nothinking";
  o.m = reference_m.value_or(0);
  o.m_early = 0;
  o.cr = 0.0;
  o.exited = true;
  o.empty_think = true;
  o.solution_text = llm.complete(req).text;
  o.answer = controller::answer_from_solution(o.solution_text, options.pipeline);
  o.full_run_answer = reference_answer.value_or("");
  o.matched_full_run_answer = curation::answers_equal(o.answer, o.full_run_answer);
  return o;
}

}  // namespace optexit::baselines
