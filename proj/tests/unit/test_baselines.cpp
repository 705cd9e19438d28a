// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "optexit/baselines/baselines.hpp"
#include "optexit/common/error.hpp"
#include "optexit/curation/curation.hpp"
#include "optexit/common/util.hpp"
#include "optexit/llm/mock.hpp"

namespace optexit::baselines {
namespace {

using llm::MockEntry;
using llm::MockLlmClient;
using llm::MockScript;
using llm::Role;

TokenRecord tok(double p, std::size_t index = 0) {
  TokenRecord t;
  t.index = index;
  t.token_text = " t" + std::to_string(index);
  t.chosen_logprob = std::log(p);
  t.top_k = {{0, std::log(p)}};
  return t;
}

std::vector<TokenRecord> chunks(const std::vector<double>& means, std::size_t size) {
  std::vector<TokenRecord> out;
  for (double m : means) {
    for (std::size_t i = 0; i < size; ++i) {
      const double spread = (i % 2 == 0 ? 0.01 : -0.01);
      out.push_back(tok(m + spread, out.size()));
    }
  }
  return out;
}

Trace trace_of(std::vector<TokenRecord> tokens, const std::string& prompt = "q") {
  Trace t;
  t.trace_id = "b";
  t.prompt = prompt;
  t.k = 1;
  t.cot_tokens = std::move(tokens);
  for (std::size_t i = 0; i < t.cot_tokens.size(); ++i) t.cot_tokens[i].index = i;
  t.final_answer = "42";
  t.solution_text = "\\boxed{42}";
  return t;
}

// Replies per truncation index and records every request.
class FakeModel final : public llm::LlmClient {
 public:
  std::function<std::string(const llm::LlmRequest&)> reply;
  std::vector<llm::LlmRequest> seen;

  llm::Completion complete(const llm::LlmRequest& request) override {
    seen.push_back(request);
    llm::Completion c;
    c.text = reply(request);
    return c;
  }
  llm::Completion stream(const llm::LlmRequest& request, const llm::TokenConsumer&) override { return complete(request); }
};

TEST(Deer, ThirdChunkExitsAt191) {
  const auto stream = chunks({0.90, 0.93, 0.97}, 64);
  EXPECT_EQ(deer_exit(stream, DeerConfig{}), 191u);
  EXPECT_EQ(deer_exit(chunks({0.90, 0.93, 0.94}, 64), DeerConfig{}), std::nullopt);
  std::vector<TokenRecord> flat;
  for (std::size_t i = 0; i < 64; ++i) flat.push_back(tok(0.96, i));
  EXPECT_EQ(deer_exit(flat, DeerConfig{}), 63u);
}

TEST(Deer, ThresholdIsStrict) {
  DeerConfig c;
  c.chunk_tokens = 4;
  c.prob_threshold = 0.5;
  std::vector<TokenRecord> half(4, tok(0.5));
  EXPECT_EQ(deer_exit(half, c), std::nullopt);
}

TEST(Deer, PartialTrailingChunkIgnored) {
  auto stream = chunks({0.5}, 64);
  for (std::size_t i = 0; i < 63; ++i) stream.push_back(tok(0.99, stream.size()));
  EXPECT_EQ(deer_exit(stream, DeerConfig{}), std::nullopt);
}

TEST(Deer, TranslationInvariant) {
  Rng rng(13);
  for (int trial = 0; trial < 300; ++trial) {
    DeerConfig c;
    c.chunk_tokens = 1 + rng.below(8);
    c.prob_threshold = 0.9;
    std::vector<TokenRecord> stream;
    for (std::size_t i = 0, n = rng.below(60); i < n; ++i) stream.push_back(tok(rng.uniform(0.8, 1.0), i));
    std::vector<TokenRecord> shifted;
    for (std::size_t i = 0; i < c.chunk_tokens; ++i) shifted.push_back(tok(rng.uniform(0.1, 0.8), i));
    shifted.insert(shifted.end(), stream.begin(), stream.end());
    const auto a = deer_exit(stream, c);
    const auto b = deer_exit(shifted, c);
    ASSERT_EQ(a.has_value(), b.has_value());
    if (a) {
      EXPECT_EQ(*b, *a + c.chunk_tokens);
    }
  }
}

TEST(Deer, Errors) {
  TokenRecord bare;
  EXPECT_THROW(deer_exit(std::vector<TokenRecord>{bare}, DeerConfig{}), Error);
  DeerConfig c;
  c.chunk_tokens = 0;
  EXPECT_THROW(c.validate(), Error);
  c = DeerConfig{};
  c.prob_threshold = 1.0;
  EXPECT_THROW(DeerDetector{c}, Error);
}

TEST(Deer, PolicyTruncatesAfterChunk) {
  const auto t = trace_of(chunks({0.5, 0.97, 0.5}, 64));
  MockEntry e;
  e.role = Role::solve_after_truncation;
  e.prompt_sha256 = sha256_hex("q");
  e.answer_from_index = 100;
  e.response_text = "\\boxed{42}";
  MockLlmClient client{MockScript({e})};
  const auto o = deer(t, DeerConfig{}, SolveOptions{}, client);
  EXPECT_EQ(o.policy, "deer");
  EXPECT_TRUE(o.exited);
  EXPECT_EQ(o.m_early, 128u);
  EXPECT_DOUBLE_EQ(o.cr, 128.0 / 192.0);
  EXPECT_TRUE(o.matched_full_run_answer);

  const auto none = deer(trace_of(chunks({0.5}, 64)), DeerConfig{}, SolveOptions{}, client);
  EXPECT_FALSE(none.exited);
  EXPECT_EQ(none.cr, 1.0);
  EXPECT_EQ(none.policy, "deer");
}

TEST(Dynasor, DecideExamples) {
  const std::vector<std::string> seq = {"A", "A", "B", "A", "A", "A", "A", "A", "A", "A", "A"};
  EXPECT_EQ(dynasor_decide(seq, DynasorConfig{}), 11u);
  const std::vector<std::string> never = {"1", "2", "3", "4", "5", "6", "7", "8", "9", "10"};
  EXPECT_EQ(dynasor_decide(never, DynasorConfig{}), std::nullopt);
  const std::vector<std::string> reset = {"A", "A", "A", "A", "A", "A", "A", "", "A"};
  EXPECT_EQ(dynasor_decide(reset, DynasorConfig{}), std::nullopt);
  const std::vector<std::string> normalized = {"5", " 5.", "5 ", "5", "5", "5", "5", "5"};
  EXPECT_EQ(dynasor_decide(normalized, DynasorConfig{}), 8u);
}

TEST(Dynasor, NeverBeforeWProbes) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    DynasorConfig c;
    c.consistency_w = 2 + rng.below(6);
    std::vector<std::string> seq;
    for (std::size_t i = 0, n = rng.below(30); i < n; ++i) seq.push_back(rng.below(4) ? "x" : "y");
    if (const auto at = dynasor_decide(seq, c)) {
      EXPECT_GE(*at, c.consistency_w);
    }
  }
}

TEST(Dynasor, ParseInterim) {
  EXPECT_EQ(parse_interim("42} because"), "42");
  EXPECT_EQ(parse_interim("\\frac{1}{2}}."), "\\frac{1}{2}");
  EXPECT_EQ(parse_interim("I am not sure"), "");
  EXPECT_EQ(parse_interim("\\boxed{7}"), "7");
}

TEST(Dynasor, PolicyExitsAtToken704) {
  std::vector<TokenRecord> tokens;
  for (std::size_t i = 0; i < 1000; ++i) tokens.push_back(tok(0.5, i));
  const auto t = trace_of(tokens);
  FakeModel model;
  const std::map<std::size_t, std::string> interim = {{64, "A}"}, {128, "A}"}, {192, "B}"}};
  model.reply = [&](const llm::LlmRequest& r) -> std::string {
    const std::size_t keep = r.truncation_index.value_or(0);
    if (r.assistant_prefix->ends_with(DynasorConfig{}.probe_prompt)) {
      auto it = interim.find(keep);
      return it != interim.end() ? it->second : "A}";
    }
    return "\\boxed{A}";
  };
  const auto o = dynasor(t, DynasorConfig{}, SolveOptions{}, model);
  EXPECT_EQ(o.policy, "dynasor");
  EXPECT_TRUE(o.exited);
  EXPECT_EQ(o.m_early, 704u);
  ASSERT_EQ(model.seen.size(), 12u);
  EXPECT_EQ(model.seen[0].assistant_prefix.value_or(""), decoded_text(t.cot_tokens, 64) + kDynasorProbePrompt);
  EXPECT_EQ(model.seen.back().assistant_prefix.value_or(""), decoded_text(t.cot_tokens, 704) + "</think>\n");
  EXPECT_EQ(o.answer, "A");
  EXPECT_FALSE(o.matched_full_run_answer);
}

TEST(Dynasor, NoConsensusRunsToEnd) {
  std::vector<TokenRecord> tokens;
  for (std::size_t i = 0; i < 300; ++i) tokens.push_back(tok(0.5, i));
  FakeModel model;
  model.reply = [](const llm::LlmRequest& r) { return std::to_string(r.truncation_index.value_or(0)) + "}"; };
  const auto o = dynasor(trace_of(tokens), DynasorConfig{}, SolveOptions{}, model);
  EXPECT_FALSE(o.exited);
  EXPECT_EQ(o.cr, 1.0);
  EXPECT_EQ(model.seen.size(), 4u);
}

TEST(Dynasor, ConfigValidation) {
  DynasorConfig c;
  c.consistency_w = 1;
  EXPECT_THROW(c.validate(), Error);
  c = DynasorConfig{};
  c.interval_tokens = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Vanilla, FullLength) {
  const auto o = vanilla(trace_of(chunks({0.5}, 10)));
  EXPECT_EQ(o.policy, "vanilla");
  EXPECT_EQ(o.m, 10u);
  EXPECT_EQ(o.m_early, 10u);
  EXPECT_EQ(o.cr, 1.0);
  EXPECT_EQ(o.answer, "42");
  EXPECT_TRUE(o.matched_full_run_answer);
}

TEST(NoThinking, DirectSolution) {
  MockEntry e;
  e.role = Role::generate;
  e.prompt_sha256 = sha256_hex("q");
  e.response_text = "\\boxed{42}";
  MockLlmClient client{MockScript({e})};
  const auto o = nothinking("n", "q", 1000, std::string("42"), SolveOptions{}, client);
  EXPECT_EQ(o.answer, "42");
  EXPECT_EQ(o.m_early, 0u);
  EXPECT_EQ(o.m, 1000u);
  EXPECT_EQ(o.cr, 0.0);
  EXPECT_TRUE(o.empty_think);
  EXPECT_TRUE(o.matched_full_run_answer);
  const auto log = client.requests();
  ASSERT_EQ(log.size(), 1u);
  EXPECT_EQ(log[0].assistant_prefix.value_or(""), "<think>\n\n</think>\n");
}

TEST(NoThinking, PlainAnswerViaPipeline) {
  MockEntry gen;
  gen.role = Role::generate;
  gen.prompt_sha256 = sha256_hex("q");
  gen.response_text = "42";
  MockEntry ext;
  ext.role = Role::extract;
  ext.prompt_sha256 = sha256_hex(curation::extract_prompt({}, "42"));
  ext.response_text = "42";
  MockLlmClient client{MockScript({gen, ext})};
  SolveOptions opts;
  opts.pipeline = &client;
  const auto o = nothinking("n", "q", std::nullopt, std::nullopt, opts, client);
  EXPECT_EQ(o.answer, "42");
  EXPECT_EQ(o.m, 0u);
  EXPECT_FALSE(o.matched_full_run_answer);
}

TEST(NoThinking, MalformedTemplate) {
  MockLlmClient client{MockScript{}};
  SolveOptions opts;
  opts.chat.think_close.clear();
  try {
    nothinking("n", "q", std::nullopt, std::nullopt, opts, client);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TemplateError);
  }
  EXPECT_EQ(client.request_count(), 0u);
}

}  // namespace
}  // namespace optexit::baselines
