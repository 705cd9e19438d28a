// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "corpus.hpp"
#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"
#include "optexit/curation/curation.hpp"
#include "optexit/llm/mock.hpp"

namespace optexit::curation {
namespace {

using llm::MockEntry;
using llm::MockLlmClient;
using llm::MockScript;
using llm::Role;
using testing::TempDir;

Trace text_trace(const std::vector<std::string>& texts, std::string id = "t", std::string answer = "") {
  Trace t;
  t.trace_id = std::move(id);
  t.prompt = "p";
  t.k = 1;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    TokenRecord r;
    r.index = i;
    r.token_text = texts[i];
    r.chosen_logprob = -0.1;
    r.top_k = {TopKEntry{0, -0.1}};
    t.cot_tokens.push_back(r);
  }
  if (!answer.empty()) t.final_answer = answer;
  return t;
}

MockEntry reply(Role role, const std::string& prompt, const std::string& text) {
  MockEntry e;
  e.role = role;
  e.prompt_sha256 = sha256_hex(prompt);
  e.response_text = text;
  return e;
}

std::size_t levenshtein(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1)});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Every window within the length band, scored independently.
double brute_best_score(std::string_view span, std::string_view text) {
  if (text.find(span) != std::string_view::npos) return 1.0;
  const std::size_t len = span.size();
  const std::size_t slack = static_cast<std::size_t>(std::ceil(0.2 * static_cast<double>(len)));
  const std::size_t lo = len > slack ? std::max<std::size_t>(1, len - slack) : 1;
  double best = 0.0;
  for (std::size_t s = 0; s < text.size(); ++s) {
    for (std::size_t w = lo; w <= len + slack && s + w <= text.size(); ++w) {
      const double d = static_cast<double>(levenshtein(span, text.substr(s, w)));
      best = std::max(best, 1.0 - d / static_cast<double>(std::max(len, w)));
    }
  }
  return best;
}

TEST(ParseBoxed, Cases) {
  EXPECT_EQ(parse_boxed("the result is \\boxed{42}.").value_or(""), "42");
  EXPECT_EQ(parse_boxed("\\boxed{\\frac{1}{2}}").value_or(""), "\\frac{1}{2}");
  EXPECT_EQ(parse_boxed("\\boxed{1} then \\boxed{2}").value_or(""), "2");
  EXPECT_EQ(parse_boxed("\\boxed{\\{a\\}}").value_or(""), "\\{a\\}");
  EXPECT_FALSE(parse_boxed("no marker"));
  EXPECT_FALSE(parse_boxed("\\boxed{unclosed"));
}

TEST(ParseBoxed, MatchesBraceCounter) {
  Rng rng(21);
  const std::string alphabet = "{}ab";
  for (int trial = 0; trial < 500; ++trial) {
    std::string body;
    for (std::size_t i = 0, n = rng.below(12); i < n; ++i) body += alphabet[rng.below(alphabet.size())];
    const std::string text = "\\boxed{" + body;
    int depth = 1;
    std::optional<std::string> expected;
    for (std::size_t i = 0; i < body.size(); ++i) {
      depth += body[i] == '{' ? 1 : body[i] == '}' ? -1 : 0;
      if (depth == 0) {
        expected = body.substr(0, i);
        break;
      }
    }
    EXPECT_EQ(parse_boxed(text), expected) << text;
  }
}

TEST(NormalizeAnswer, Rules) {
  EXPECT_EQ(normalize_answer("  42. "), "42");
  EXPECT_EQ(normalize_answer("x  +\n 1 !?"), "x + 1");
  EXPECT_TRUE(answers_equal("42", " 42."));
  EXPECT_FALSE(answers_equal("", ""));
  EXPECT_FALSE(answers_equal("42", "43"));
}

TEST(ExtractAnswer, LocalParseNeedsNoLlm) {
  MockLlmClient client(MockScript{});
  EXPECT_EQ(extract_answer("so the result is \\boxed{42}.", &client), "42");
  EXPECT_EQ(client.request_count(), 0u);
  EXPECT_EQ(extract_answer("\\boxed{\\frac{1}{2}}", nullptr), "\\frac{1}{2}");
}

TEST(ExtractAnswer, FallsBackToLlm) {
  const std::string solution = "The polynomial is x^2+1 as shown.";
  MockLlmClient client(MockScript({reply(Role::extract, extract_prompt({}, solution), "x^2+1")}));
  EXPECT_EQ(extract_answer(solution, &client), "x^2+1");
  EXPECT_EQ(client.request_count(), 1u);
}

TEST(ExtractAnswer, Errors) {
  try {
    extract_answer("   ", nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptySolution);
  }
  MockLlmClient client(MockScript({reply(Role::extract, extract_prompt({}, "no answer"), "NONE")}));
  try {
    extract_answer("no answer", &client);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::LlmRefusal);
  }
  EXPECT_EQ(try_extract_answer("no answer", &client), "");
}

TEST(Templates, RenderSinglePass) {
  PromptTemplates t;
  t.identify = "A={answer} C={cot} F={feedback} {unknown}";
  EXPECT_EQ(identify_prompt(t, "{cot}", "x", ""), "A={cot} C=x F= {unknown}");
  EXPECT_EQ(feedback_line({}, "d"), "\n Previous span d was incorrect, try again");
  EXPECT_EQ(verify_prompt({}, "so 5", "5"), "Does so 5 contain 5?");
}

TEST(Templates, LoadSubset) {
  TempDir dir("prompts");
  write_file(dir / "p.json", R"({"verify":"Is {answer} in {span}?"})");
  const auto t = load_prompt_templates(dir / "p.json");
  EXPECT_EQ(t.verify, "Is {answer} in {span}?");
  EXPECT_EQ(t.extract, PromptTemplates{}.extract);
  write_file(dir / "bad.json", R"({"verify":3})");
  EXPECT_THROW(load_prompt_templates(dir / "bad.json"), SchemaError);
}

TEST(FuzzyMatch, ExactEarliest) {
  const std::string text = "so you get 5 and again you get 5</think>";
  const auto m = fuzzy_match_span("get 5", text, 0.9);
  EXPECT_EQ(m.score, 1.0);
  EXPECT_EQ(m.char_start, text.find("get 5"));
  EXPECT_EQ(m.char_end, m.char_start + 5);
}

TEST(FuzzyMatch, OneTypoInTwentyChars) {
  const std::string target = "the total comes to 42";
  const std::string span = "the totel comes to 42";
  ASSERT_EQ(span.size(), 21u);
  const std::string text = "first we add things, then the total comes to 42 which we check";
  const auto m = fuzzy_match_span(span, text, 0.9);
  EXPECT_NEAR(m.score, brute_best_score(span, text), 1e-12);
  EXPECT_NEAR(m.score, 1.0 - 1.0 / 21.0, 1e-12);
  EXPECT_EQ(m.char_start, text.find(target));
  EXPECT_EQ(m.char_end, text.find(target) + target.size());

  const std::string span20 = "the totel comes to 4";
  EXPECT_NEAR(fuzzy_match_span(span20, text, 0.9).score, 0.95, 1e-12);
}

TEST(FuzzyMatch, AbsentSpanBelowThreshold) {
  const std::string span = "zzzzzzzzzz";
  const std::string text = "abc zz def";
  try {
    fuzzy_match_span(span, text, 0.9);
    FAIL();
  } catch (const BelowThreshold& e) {
    EXPECT_NEAR(e.best_score(), brute_best_score(span, text), 1e-12);
    EXPECT_NEAR(e.best_score(), 0.2, 1e-12);
  }
}

TEST(FuzzyMatch, AgreesWithBruteForce) {
  Rng rng(8);
  const std::string alphabet = "abc ";
  for (int trial = 0; trial < 2000; ++trial) {
    std::string text;
    std::string span;
    for (std::size_t i = 0, n = 1 + rng.below(40); i < n; ++i) text += alphabet[rng.below(4)];
    for (std::size_t i = 0, n = 1 + rng.below(12); i < n; ++i) span += alphabet[rng.below(4)];
    const double oracle = brute_best_score(span, text);
    double got = 0.0;
    try {
      const auto m = fuzzy_match_span(span, text, 1e-9);
      got = m.score;
      const double d = static_cast<double>(levenshtein(span, std::string_view(text).substr(m.char_start, m.char_end - m.char_start)));
      EXPECT_NEAR(1.0 - d / static_cast<double>(std::max(span.size(), m.char_end - m.char_start)), got, 1e-12);
    } catch (const BelowThreshold& e) {
      got = e.best_score();
    }
    EXPECT_NEAR(got, oracle, 1e-12) << span << " | " << text;
  }
}

TEST(FuzzyMatch, ScoreOneIsEarliestSubstring) {
  Rng rng(9);
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    std::string span;
    for (std::size_t i = 0, n = 1 + rng.below(30); i < n; ++i) text += "ab"[rng.below(2)];
    for (std::size_t i = 0, n = 1 + rng.below(4); i < n; ++i) span += "ab"[rng.below(2)];
    std::optional<std::size_t> naive;
    for (std::size_t s = 0; s + span.size() <= text.size() && !naive; ++s) {
      if (text.compare(s, span.size(), span) == 0) naive = s;
    }
    if (naive) {
      EXPECT_EQ(fuzzy_match_span(span, text, 1.0).char_start, *naive);
    } else {
      EXPECT_THROW(fuzzy_match_span(span, text, 1.0), BelowThreshold);
    }
  }
}

TEST(CharToToken, Intervals) {
  const auto t = text_trace({"He", "llo", " wor", "ld"});
  EXPECT_EQ(char_to_token(5, t.cot_tokens), 2u);
  EXPECT_EQ(char_to_token(0, t.cot_tokens), 0u);
  EXPECT_EQ(char_to_token(2, t.cot_tokens), 1u);
  EXPECT_EQ(char_to_token(11, t.cot_tokens), 3u);
  try {
    char_to_token(12, t.cot_tokens);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OutOfRange);
  }
}

class LocateTwoRounds : public ::testing::Test {
 protected:
  Trace trace = text_trace({"<think>", "\nFirst", " guess", " 7", ",", " so", " we", " get", " 5", " done", "</think>"},
                           "two", "5");
  std::string cot = decoded_text(trace.cot_tokens);
  PromptTemplates prompts;
};

TEST_F(LocateTwoRounds, VerifiesOnRetryWithFeedback) {
  const std::string wrong = "First guess 7";
  const std::string right = "so we get 5";
  MockLlmClient client(MockScript({
      reply(Role::identify, identify_prompt(prompts, "5", cot, ""), wrong),
      reply(Role::verify, verify_prompt(prompts, wrong, "5"), "No"),
      reply(Role::identify, identify_prompt(prompts, "5", cot, feedback_line(prompts, wrong)), right),
      reply(Role::verify, verify_prompt(prompts, right, "5"), "Yes, it does."),
  }));
  const auto pos = locate_answer(trace, CurationConfig{}, client);
  EXPECT_TRUE(pos.verified);
  EXPECT_EQ(pos.retries_used, 1u);
  EXPECT_EQ(pos.span_text, right);
  EXPECT_EQ(pos.char_start, cot.find(right));
  EXPECT_EQ(pos.char_end, cot.find(right) + right.size());
  EXPECT_EQ(pos.token_index, char_to_token(pos.char_end, trace.cot_tokens));
  EXPECT_EQ(pos.token_index, 9u);
  EXPECT_GE(decoded_text(trace.cot_tokens, pos.token_index + 1).size(), pos.char_end);

  const auto log = client.requests();
  ASSERT_EQ(log.size(), 4u);
  EXPECT_EQ(log[0].user_prompt.find("Previous span"), std::string::npos);
  EXPECT_NE(log[2].user_prompt.find("Previous span " + wrong + " was incorrect"), std::string::npos);
  EXPECT_EQ(log[3].role, Role::verify);
}

TEST_F(LocateTwoRounds, AlwaysFalseVerifierExhaustsRetries) {
  CurationConfig config;
  config.max_retries = 3;
  std::vector<MockEntry> entries;
  std::string feedback;
  for (std::size_t k = 0; k < config.max_retries; ++k) {
    const std::string span = "candidate " + std::to_string(k);
    entries.push_back(reply(Role::identify, identify_prompt(prompts, "5", cot, feedback), span));
    entries.push_back(reply(Role::verify, verify_prompt(prompts, span, "5"), "no"));
    feedback += feedback_line(prompts, span);
  }
  MockLlmClient client{MockScript(entries)};
  try {
    locate_answer(trace, config, client);
    FAIL();
  } catch (const RetriesExhausted& e) {
    EXPECT_EQ(e.code(), ErrorCode::RetriesExhausted);
    EXPECT_EQ(e.max_retries(), 3u);
    ASSERT_EQ(e.rejected_spans().size(), 3u);
    EXPECT_EQ(e.rejected_spans()[2], "candidate 2");
  }
  EXPECT_EQ(client.request_count(), 6u);
}

TEST_F(LocateTwoRounds, VerifiedSpanMissingFromCot) {
  const std::string ghost = "an entirely different sentence";
  MockLlmClient client(MockScript({
      reply(Role::identify, identify_prompt(prompts, "5", cot, ""), ghost),
      reply(Role::verify, verify_prompt(prompts, ghost, "5"), "yes"),
  }));
  try {
    locate_answer(trace, CurationConfig{}, client);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SpanNotFound);
  }
}

TEST(CurationConfig, Validation) {
  CurationConfig c;
  c.max_retries = 0;
  EXPECT_THROW(c.validate(), Error);
  c = CurationConfig{};
  c.min_fuzzy_score = 0.0;
  EXPECT_THROW(c.validate(), Error);
  c.min_fuzzy_score = 1.0;
  EXPECT_NO_THROW(c.validate());
}

TEST(AssembleDataset, EightOfTen) {
  auto corpus = testing::make_corpus({.n_traces = 10});
  const PromptTemplates prompts;
  for (std::size_t n : {3u, 7u}) {
    const auto hash = sha256_hex(verify_prompt(prompts, testing::answer_span(corpus.answers[n]), corpus.answers[n]));
    for (auto& e : corpus.entries) {
      if (e.role == Role::verify && e.prompt_sha256 == hash) e.response_text = "No";
    }
  }
  CurationConfig config;
  config.max_retries = 1;
  MockLlmClient client(corpus.script());
  const auto ds = assemble_dataset(corpus.traces, config, client);
  EXPECT_EQ(ds.labeled.size(), 8u);
  EXPECT_EQ(ds.report.succeeded, 8u);
  EXPECT_DOUBLE_EQ(ds.report.success_rate(), 0.8);
  ASSERT_EQ(ds.report.records.size(), 10u);
  EXPECT_EQ(ds.report.records[3].status, "RetriesExhausted");
  EXPECT_FALSE(ds.report.records[3].token_index);
  for (const auto& lt : ds.labeled) {
    const std::size_t n = static_cast<std::size_t>(std::stoi(lt.trace.trace_id.substr(1)));
    EXPECT_EQ(lt.answer.token_index, corpus.answer_index[n]);
    EXPECT_EQ(lt.trace.final_answer.value_or(""), corpus.answers[n]);
    EXPECT_NO_THROW(validate_labeled(lt));
  }
  const std::string csv = ds.report.csv();
  EXPECT_EQ(csv.rfind("trace_id,status,retries_used,token_index\n", 0), 0u);
  EXPECT_NE(csv.find("t003,RetriesExhausted,1,\n"), std::string::npos);
}

TEST(AssembleDataset, AnswerAtFirstThinkToken) {
  Trace t = text_trace({"<think>", "x=42 is it", " ok", "</think>"}, "first", "42");
  const PromptTemplates prompts;
  const std::string cot = decoded_text(t.cot_tokens);
  MockLlmClient client(MockScript({
      reply(Role::identify, identify_prompt(prompts, "42", cot, ""), "x=42"),
      reply(Role::verify, verify_prompt(prompts, "x=42", "42"), "yes"),
  }));
  const std::vector<Trace> traces = {t};
  const auto ds = assemble_dataset(traces, CurationConfig{}, client);
  ASSERT_EQ(ds.labeled.size(), 1u);
  const auto& lt = ds.labeled[0];
  EXPECT_EQ(lt.answer.token_index, 1u);
  for (std::size_t i = 0; i < lt.labels.size(); ++i) {
    if (lt.loss_mask[i]) {
      EXPECT_EQ(lt.labels[i], 1) << i;
    }
  }
  EXPECT_EQ(lt.loss_mask, (std::vector<std::uint8_t>{0, 1, 1, 0}));
}

TEST(AssembleDataset, AnswerAtTokenZeroLabelsAllOnes) {
  Trace t = text_trace({"x=42 is it", " ok"}, "zero", "42");
  const PromptTemplates prompts;
  MockLlmClient client(MockScript({
      reply(Role::identify, identify_prompt(prompts, "42", decoded_text(t.cot_tokens), ""), "x=42"),
      reply(Role::verify, verify_prompt(prompts, "x=42", "42"), "yes"),
  }));
  const std::vector<Trace> traces = {t};
  const auto ds = assemble_dataset(traces, CurationConfig{}, client);
  ASSERT_EQ(ds.labeled.size(), 1u);
  EXPECT_EQ(ds.labeled[0].answer.token_index, 0u);
  EXPECT_EQ(ds.labeled[0].labels, (std::vector<std::uint8_t>{1, 1}));
}

TEST(AssembleDataset, AllFailedStillReports) {
  const std::vector<Trace> traces = {text_trace({"a", " b"}, "x", "7")};
  MockLlmClient client(MockScript{});
  CurationReport report;
  try {
    assemble_dataset(traces, CurationConfig{}, client, &report);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllFailed);
  }
  ASSERT_EQ(report.records.size(), 1u);
  EXPECT_EQ(report.records[0].status, "NoScriptMatch");
}

class Unreachable final : public llm::LlmClient {
 public:
  llm::Completion complete(const llm::LlmRequest&) override {
    throw TransportError(ErrorCode::Transport, 0, "connection refused");
  }
  llm::Completion stream(const llm::LlmRequest& r, const llm::TokenConsumer&) override { return complete(r); }
};

TEST(AssembleDataset, UnreachableEndpointIsTransportError) {
  const std::vector<Trace> traces = {text_trace({"a", " b"}, "x", "7"), text_trace({"c"}, "y", "8")};
  Unreachable client;
  CurationReport report;
  try {
    assemble_dataset(traces, CurationConfig{}, client, &report);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Transport);
    EXPECT_EQ(e.category(), ErrorCategory::transport);
  }
  ASSERT_EQ(report.records.size(), 2u);
  EXPECT_EQ(report.records[1].status, "Transport");
}

TEST(AssembleDataset, MixedFailuresStayAllFailed) {
  const std::vector<Trace> traces = {text_trace({"a", " b"}, "x", "7"), text_trace({"c"}, "y", "8")};
  class Partial final : public llm::LlmClient {
   public:
    llm::Completion complete(const llm::LlmRequest& r) override {
      if (r.user_prompt.find(" b") != std::string::npos) throw TransportError(ErrorCode::Transport, 503, "busy");
      return {};
    }
    llm::Completion stream(const llm::LlmRequest& r, const llm::TokenConsumer&) override { return complete(r); }
  } client;
  try {
    assemble_dataset(traces, CurationConfig{}, client);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::AllFailed);
  }
}

TEST(AssembleDataset, DeterministicBytes) {
  const auto corpus = testing::make_corpus({.n_traces = 6});
  TempDir dir("assemble");
  std::string first;
  for (int run = 0; run < 2; ++run) {
    MockLlmClient client(corpus.script());
    CurationConfig config;
    config.max_inflight = 3;
    const auto ds = assemble_dataset(corpus.traces, config, client);
    const auto path = dir / ("run" + std::to_string(run) + ".jsonl");
    save_labeled(path, ds.labeled);
    const std::string bytes = read_file(path) + ds.report.csv();
    if (run == 0) {
      first = bytes;
    } else {
      EXPECT_EQ(bytes, first);
    }
  }
}

}  // namespace
}  // namespace optexit::curation
