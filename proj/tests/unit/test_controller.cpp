// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "corpus.hpp"
#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"
#include "optexit/exit/controller.hpp"
#include "optexit/llm/mock.hpp"

namespace optexit::controller {
namespace {

using llm::MockEntry;
using llm::MockLlmClient;
using llm::MockScript;
using llm::Role;

std::optional<std::size_t> run_bits(const std::vector<int>& bits, const ExitConfig& config = {}) {
  ExitSession s(config);
  for (int b : bits) {
    if (s.step_bit(b != 0) == Decision::exit) return s.exited_at();
  }
  return std::nullopt;
}

// Direct restatement of the rule: the first t whose trailing window holds
// enough ones.
std::optional<std::size_t> reference_exit(const std::vector<int>& bits, const ExitConfig& c) {
  for (std::size_t t = 1; t <= bits.size(); ++t) {
    if (c.warmup == Warmup::require_full_window && t < c.window) continue;
    const std::size_t from = t >= c.window ? t - c.window : 0;
    std::size_t ones = 0;
    for (std::size_t i = from; i < t; ++i) ones += bits[i] != 0;
    if (ones >= c.majority_min) return t;
  }
  return std::nullopt;
}

TEST(ExitSession, ExampleStreams) {
  EXPECT_EQ(run_bits({0, 0, 0, 0, 1, 1, 1, 1, 1, 1}), 10u);
  EXPECT_EQ(run_bits({0, 0, 0, 0, 1, 1, 1, 1, 1}), std::nullopt);
  std::vector<int> alternating;
  for (int i = 0; i < 1000; ++i) alternating.push_back(i % 2 == 0);
  EXPECT_EQ(run_bits(alternating), std::nullopt);
  EXPECT_EQ(run_bits(std::vector<int>(500, 0)), std::nullopt);
  EXPECT_EQ(run_bits(std::vector<int>(20, 1)), 10u);
}

TEST(ExitSession, ProbabilityThreshold) {
  ExitSession s{ExitConfig{}};
  for (int i = 0; i < 5; ++i) s.step(0.7);
  for (int i = 0; i < 4; ++i) s.step(0.6999999);
  EXPECT_EQ(s.ones_in_window(), 5u);
  EXPECT_EQ(s.step(0.7), Decision::exit);
  EXPECT_EQ(s.exited_at(), 10u);
  try {
    s.step(0.9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SteppedAfterExit);
    EXPECT_EQ(e.category(), ErrorCategory::internal);
  }
  ExitSession t{ExitConfig{}};
  EXPECT_THROW(t.step(1.5), Error);
  EXPECT_THROW(t.step(std::nan("")), Error);
}

TEST(ExitSession, OutsideThinkRegionBitsAreZero) {
  ExitSession s{ExitConfig{}};
  s.set_in_think_region(false);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(s.step_bit(true), Decision::proceed);
  s.set_in_think_region(true);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(s.step_bit(true), Decision::proceed);
  EXPECT_EQ(s.step_bit(true), Decision::exit);
  EXPECT_EQ(s.exited_at(), 16u);
}

TEST(ExitSession, AllowPartialWarmup) {
  ExitConfig c;
  c.warmup = Warmup::allow_partial;
  EXPECT_EQ(run_bits({1, 1, 1, 1, 1, 1}, c), 6u);
  EXPECT_EQ(run_bits({1, 1, 1, 1, 1, 1}), std::nullopt);
}

TEST(ExitSession, AgreesWithReferenceSimulator) {
  Rng rng(2024);
  for (int trial = 0; trial < 10000; ++trial) {
    ExitConfig c;
    if (trial % 4 == 3) c.warmup = Warmup::allow_partial;
    const double density = rng.uniform(0.2, 0.8);
    std::vector<int> bits;
    for (std::size_t i = 0, n = 1 + rng.below(60); i < n; ++i) bits.push_back(rng.uniform() < density);
    const auto got = run_bits(bits, c);
    ASSERT_EQ(got, reference_exit(bits, c)) << "trial " << trial;
    if (got && c.warmup == Warmup::require_full_window) {
      EXPECT_GE(*got, c.window);
    }
  }
}

TEST(ExitSession, OtherWindowShapesAgree) {
  Rng rng(5);
  for (int trial = 0; trial < 2000; ++trial) {
    ExitConfig c;
    c.window = 1 + rng.below(12);
    c.majority_min = 1 + rng.below(c.window);
    std::vector<int> bits;
    for (std::size_t i = 0, n = rng.below(40); i < n; ++i) bits.push_back(static_cast<int>(rng.below(2)));
    ASSERT_EQ(run_bits(bits, c), reference_exit(bits, c));
  }
}

TEST(ExitConfig, Validation) {
  ExitConfig c;
  EXPECT_NO_THROW(c.validate());
  c.majority_min = 11;
  EXPECT_THROW(c.validate(), Error);
  c = ExitConfig{};
  c.majority_min = 0;
  EXPECT_THROW(c.validate(), Error);
  c = ExitConfig{};
  c.prob_threshold = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = ExitConfig{};
  c.window = 0;
  EXPECT_THROW(ExitSession{c}, Error);
}

TEST(CompressionRate, Definition) {
  EXPECT_DOUBLE_EQ(compression_rate(500, 1000), 0.5);
  EXPECT_DOUBLE_EQ(compression_rate(7, 7), 1.0);
  const double mean = (compression_rate(2, 10) + compression_rate(4, 10) + compression_rate(9, 10)) / 3.0;
  EXPECT_NEAR(mean, 0.5, 1e-15);
  for (auto [e, m] : {std::pair<std::size_t, std::size_t>{0, 5}, {6, 5}}) {
    try {
      compression_rate(e, m);
      FAIL();
    } catch (const Error& err) {
      EXPECT_EQ(err.code(), ErrorCode::OutOfRange);
    }
  }
}

TEST(ReplayExit, RegionMasksBits) {
  std::vector<double> probs(30, 0.9);
  EXPECT_EQ(replay_exit(probs, ThinkRegion{0, 30}, ExitConfig{}), 10u);
  EXPECT_EQ(replay_exit(probs, ThinkRegion{1, 30}, ExitConfig{}), 10u);
  EXPECT_EQ(replay_exit(probs, ThinkRegion{5, 30}, ExitConfig{}), 11u);
  EXPECT_EQ(replay_exit(probs, ThinkRegion{1, 5}, ExitConfig{}), std::nullopt);
}

// --- live and replayed sessions -----------------------------------------

TokenRecord scripted_token(const std::string& text, double top1) {
  TokenRecord t;
  t.token_text = text;
  t.token_id = 1;
  t.chosen_logprob = std::log(top1);
  t.top_k = {{1, std::log(top1)}, {2, std::log(1.0 - top1)}};
  return t;
}

// Probe keyed on the chosen logprob: about 0.13 for top1 <= 0.5 and about
// 0.98 for top1 >= 0.9.
probe::ProbeModel logprob_probe() {
  probe::ProbeModel m(probe::Arch::linear, probe::kLogprobFeatureDim);
  m.weights() = {0.0, 10.0, 0.0, 0.0, 5.0};
  return m;
}

struct Scripted {
  Trace trace;
  std::vector<MockEntry> entries;
};

// CoT of m tokens: `<think>`, flat until `confident_from`, peaked after.
Scripted scripted(const std::string& prompt, std::size_t m, std::size_t confident_from, std::size_t answer_from,
                  const std::string& answer = "17") {
  Scripted s;
  s.trace.trace_id = "live";
  s.trace.prompt = prompt;
  s.trace.k = 2;
  s.trace.solution_text = "The answer is \\boxed{" + answer + "}.";
  s.trace.final_answer = answer;
  s.trace.cot_tokens.push_back(scripted_token("<think>", 0.99));
  for (std::size_t i = 1; i < m; ++i) {
    s.trace.cot_tokens.push_back(scripted_token(" w" + std::to_string(i), i >= confident_from ? 0.95 : 0.45));
  }
  for (std::size_t i = 0; i < m; ++i) s.trace.cot_tokens[i].index = i;

  MockEntry gen;
  gen.role = Role::generate;
  gen.prompt_sha256 = sha256_hex(prompt);
  std::vector<TokenRecord> stream = s.trace.cot_tokens;
  stream.push_back(scripted_token("</think>", 0.99));
  for (const auto& piece : llm::mock_tokenize("\n" + s.trace.solution_text)) stream.push_back(scripted_token(piece, 0.99));
  for (const auto& t : stream) gen.response_text += t.token_text;
  gen.response_tokens = stream;

  MockEntry solve;
  solve.role = Role::solve_after_truncation;
  solve.prompt_sha256 = sha256_hex(prompt);
  solve.answer_from_index = answer_from;
  solve.response_text = s.trace.solution_text;
  s.entries = {gen, solve};
  return s;
}

LiveOptions live_options() {
  LiveOptions o;
  o.top_logprobs = 2;
  return o;
}

TEST(RunSession, ExitsAtFiftyOfTwoHundred) {
  const auto s = scripted("live prompt", 200, 44, 40);
  MockLlmClient client{MockScript(s.entries)};
  const auto o = run_session("live", "live prompt", logprob_probe(), probe::FeatureKind::logprob, live_options(), client);
  EXPECT_TRUE(o.exited);
  EXPECT_EQ(o.m_early, 50u);
  EXPECT_EQ(o.m, 200u);
  EXPECT_DOUBLE_EQ(o.cr, 0.25);
  EXPECT_EQ(o.answer, "17");
  EXPECT_EQ(o.full_run_answer, "17");
  EXPECT_TRUE(o.matched_full_run_answer);

  const auto log = client.requests();
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[2].role, Role::solve_after_truncation);
  EXPECT_EQ(log[2].truncation_index, 50u);
  EXPECT_EQ(log[2].assistant_prefix.value_or(""),
            decoded_text(s.trace.cot_tokens, 50) + "</think>\n");
}

TEST(RunSession, ReferenceSkipsVanillaRun) {
  const auto s = scripted("live prompt", 200, 44, 40);
  MockLlmClient client{MockScript(s.entries)};
  auto opts = live_options();
  opts.reference_length = 400;
  opts.reference_answer = "17";
  const auto o = run_session("live", "live prompt", logprob_probe(), probe::FeatureKind::logprob, opts, client);
  EXPECT_EQ(o.m, 400u);
  EXPECT_DOUBLE_EQ(o.cr, 0.125);
  EXPECT_EQ(client.request_count(), 2u);
}

TEST(RunSession, ExitBeforeAnswerMisses) {
  const auto s = scripted("live prompt", 200, 44, 60);
  MockLlmClient client{MockScript(s.entries)};
  const auto o = run_session("live", "live prompt", logprob_probe(), probe::FeatureKind::logprob, live_options(), client);
  EXPECT_EQ(o.m_early, 50u);
  EXPECT_FALSE(o.matched_full_run_answer);
  EXPECT_EQ(o.answer, "");
}

TEST(RunSession, SilentProbeIsVanilla) {
  const auto s = scripted("live prompt", 200, 44, 40);
  MockLlmClient client{MockScript(s.entries)};
  probe::ProbeModel silent(probe::Arch::linear, probe::kLogprobFeatureDim);
  silent.weights().back() = -20.0;
  const auto o = run_session("live", "live prompt", silent, probe::FeatureKind::logprob, live_options(), client);
  EXPECT_FALSE(o.exited);
  EXPECT_EQ(o.m, 200u);
  EXPECT_EQ(o.m_early, 200u);
  EXPECT_EQ(o.cr, 1.0);
  EXPECT_EQ(o.solution_text, "\n" + s.trace.solution_text);
  EXPECT_TRUE(o.matched_full_run_answer);
  EXPECT_EQ(client.request_count(), 1u);
}

TEST(RunSession, ThinkOpenTokenNeverVotes) {
  const auto s = scripted("p2", 40, 1, 1);
  MockLlmClient client{MockScript(s.entries)};
  auto opts = live_options();
  opts.exit.warmup = Warmup::allow_partial;
  const auto o = run_session("live", "p2", logprob_probe(), probe::FeatureKind::logprob, opts, client);
  EXPECT_EQ(o.m_early, 7u);
}

TEST(RunSession, CapStopsGeneration) {
  const auto s = scripted("p3", 200, 500, 0);
  MockLlmClient client{MockScript(s.entries)};
  auto opts = live_options();
  opts.exit.max_cot_tokens = 30;
  const auto o = run_session("live", "p3", logprob_probe(), probe::FeatureKind::logprob, opts, client);
  EXPECT_FALSE(o.exited);
  EXPECT_EQ(o.m_early, 30u);
  EXPECT_EQ(o.m, 200u);
  EXPECT_TRUE(o.matched_full_run_answer);
}

TEST(RunSession, SidecarFeaturesUnavailable) {
  MockLlmClient client{MockScript{}};
  try {
    run_session("x", "p", logprob_probe(), probe::FeatureKind::sidecar, live_options(), client);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FeatureUnavailable);
  }
  EXPECT_EQ(client.request_count(), 0u);
}

TEST(RunVanilla, SplitsCotAndSolution) {
  const auto s = scripted("pv", 25, 30, 0);
  MockLlmClient client{MockScript(s.entries)};
  const auto run = run_vanilla("pv", client, live_options());
  ASSERT_EQ(run.cot.size(), 25u);
  EXPECT_EQ(run.cot[24].index, 24u);
  EXPECT_EQ(run.answer, "17");
  EXPECT_EQ(decoded_text(run.cot), decoded_text(s.trace.cot_tokens));
}

TEST(ReplayOptexit, StoredTrace) {
  const auto s = scripted("pr", 120, 30, 20);
  MockLlmClient client{MockScript(s.entries)};
  const auto features = probe::logprob_features(s.trace);
  const auto o = replay_optexit(s.trace, features, logprob_probe(), ExitConfig{}, SolveOptions{}, client);
  EXPECT_TRUE(o.exited);
  EXPECT_EQ(o.m_early, 36u);
  EXPECT_DOUBLE_EQ(o.cr, 36.0 / 120.0);
  EXPECT_TRUE(o.matched_full_run_answer);
  EXPECT_EQ(client.request_count(), 1u);

  FeatureMatrix short_f = features;
  short_f.rows -= 1;
  short_f.values.resize(short_f.rows * short_f.dim);
  EXPECT_THROW(replay_optexit(s.trace, short_f, logprob_probe(), ExitConfig{}, SolveOptions{}, client),
               RowCountMismatch);
}

TEST(ReplayOptexit, NoExitReusesStoredSolution) {
  const auto s = scripted("pn", 50, 100, 0);
  MockLlmClient client{MockScript(s.entries)};
  const auto o = replay_optexit(s.trace, probe::logprob_features(s.trace), logprob_probe(), ExitConfig{},
                                SolveOptions{}, client);
  EXPECT_FALSE(o.exited);
  EXPECT_EQ(o.cr, 1.0);
  EXPECT_EQ(o.answer, "17");
  EXPECT_EQ(client.request_count(), 0u);
}

// --- HORL ----------------------------------------------------------------

std::size_t brute_force_min(std::size_t m, const std::set<std::size_t>& succeed) {
  for (std::size_t i = 1; i <= m; ++i) {
    if (succeed.count(i)) return i;
  }
  return m;
}

TEST(Horl, ScriptedMonotoneTrace) {
  for (std::size_t from : {7u, 0u, 20u}) {
    auto s = scripted("ph", 20, 100, from);
    MockLlmClient client{MockScript(s.entries)};
    const std::size_t expected = std::max<std::size_t>(from, 1);
    EXPECT_EQ(horl(s.trace, client, HorlStrategy::exact_scan, 21, SolveOptions{}), expected) << from;
    MockLlmClient again{MockScript(s.entries)};
    EXPECT_EQ(horl(s.trace, again, HorlStrategy::grid, 5, SolveOptions{}), expected) << from;
  }
}

TEST(Horl, NonMonotoneOracle) {
  std::set<std::size_t> ok = {3};
  for (std::size_t i = 14; i <= 20; ++i) ok.insert(i);
  auto oracle = [&](std::size_t i) { return ok.count(i) > 0; };
  EXPECT_EQ(horl_search(20, oracle, HorlStrategy::exact_scan), 3u);
  const std::size_t g = horl_search(20, oracle, HorlStrategy::grid, 3);
  EXPECT_EQ(g, 14u);
  EXPECT_GE(g, 10u);
}

TEST(Horl, BruteForceEquivalence) {
  Rng rng(50);
  for (int trial = 0; trial < 3000; ++trial) {
    const std::size_t m = 1 + rng.below(50);
    const bool monotone = trial % 2 == 0;
    std::set<std::size_t> ok;
    if (monotone) {
      const std::size_t from = 1 + rng.below(m + 1);
      for (std::size_t i = from; i <= m; ++i) ok.insert(i);
    } else {
      const double density = rng.uniform(0.0, 0.5);
      for (std::size_t i = 1; i <= m; ++i) {
        if (rng.uniform() < density) ok.insert(i);
      }
    }
    std::size_t calls = 0;
    auto oracle = [&](std::size_t i) {
      ++calls;
      EXPECT_GE(i, 1u);
      EXPECT_LE(i, m);
      return ok.count(i) > 0;
    };
    const std::size_t exact = horl_search(m, oracle, HorlStrategy::exact_scan);
    ASSERT_EQ(exact, brute_force_min(m, ok));
    const std::size_t gp = 2 + rng.below(25);
    const std::size_t grid = horl_search(m, oracle, HorlStrategy::grid, gp);
    EXPECT_GE(grid, exact);
    EXPECT_LE(grid, m);
    if (monotone) {
      EXPECT_EQ(grid, exact);
    }
  }
}

TEST(Horl, Errors) {
  EXPECT_THROW(horl_search(0, [](std::size_t) { return true; }, HorlStrategy::exact_scan), Error);
  EXPECT_THROW(horl_search(5, [](std::size_t) { return true; }, HorlStrategy::grid, 1), Error);
  EXPECT_EQ(horl_strategy_from_string("exact"), HorlStrategy::exact_scan);
  EXPECT_EQ(horl_strategy_from_string("grid"), HorlStrategy::grid);
  EXPECT_THROW(horl_strategy_from_string("binary"), Error);
  Trace t;
  t.cot_tokens.resize(3);
  MockLlmClient client{MockScript{}};
  EXPECT_THROW(horl(t, client, HorlStrategy::exact_scan, 21, SolveOptions{}), Error);
}

// --- sweep ---------------------------------------------------------------

TEST(Sweep, ParseFractions) {
  const auto r = parse_fractions("0.05:1.0:0.05");
  ASSERT_EQ(r.size(), 20u);
  EXPECT_EQ(r[2], 0.15);
  EXPECT_EQ(r.back(), 1.0);
  EXPECT_EQ(parse_fractions("1.0, 0.5,0.25"), (std::vector<double>{1.0, 0.5, 0.25}));
  EXPECT_THROW(parse_fractions("0:1:0.5"), Error);
  EXPECT_THROW(parse_fractions("0.5,abc"), Error);
  EXPECT_THROW(parse_fractions("0.1:1"), Error);
  EXPECT_THROW(parse_fractions("1.5"), Error);
}

TEST(Sweep, TruncationLength) {
  EXPECT_EQ(truncation_length(0.5, 100), 50u);
  EXPECT_EQ(truncation_length(0.5, 101), 51u);
  EXPECT_EQ(truncation_length(1.0, 7), 7u);
  EXPECT_EQ(truncation_length(0.001, 7), 1u);
  EXPECT_EQ(truncation_length(0.15, 20), 3u);
}

TEST(Sweep, PlateauOnScriptedCorpus) {
  const auto corpus = testing::make_corpus({.n_traces = 20});
  for (std::size_t n = 0; n < corpus.traces.size(); ++n) {
    ASSERT_LE(corpus.answer_index[n], truncation_length(0.5, corpus.traces[n].length()));
  }
  std::vector<std::string> truth = corpus.answers;
  truth[4] = "not the answer";
  MockLlmClient client(corpus.script());
  const auto pts = truncation_sweep(corpus.traces, truth, {1.0, 0.1, 0.5, 0.75}, client, SolveOptions{}, 4);
  ASSERT_EQ(pts.size(), 4u);
  EXPECT_EQ(pts[0].fraction, 0.1);
  EXPECT_EQ(pts[3].fraction, 1.0);
  EXPECT_EQ(pts[0].mean_accuracy, 0.0);
  EXPECT_EQ(pts[1].mean_accuracy, pts[3].mean_accuracy);
  EXPECT_EQ(pts[2].mean_accuracy, pts[3].mean_accuracy);
  EXPECT_DOUBLE_EQ(pts[3].mean_accuracy, 0.95);
  EXPECT_DOUBLE_EQ(pts[3].mean_cr, 1.0);
  EXPECT_LT(pts[1].mean_cr, 0.52);
  EXPECT_EQ(pts[3].n, 20u);
  const std::string csv = sweep_csv(pts);
  EXPECT_EQ(csv.rfind("fraction,mean_accuracy,mean_cr,n\n0.1,0,", 0), 0u);
}

TEST(Sweep, Errors) {
  const auto corpus = testing::make_corpus({.n_traces = 2});
  MockLlmClient client(corpus.script());
  const std::vector<std::string> one = {"1"};
  EXPECT_THROW(truncation_sweep(corpus.traces, one, {0.5}, client, SolveOptions{}, 1), Error);
  EXPECT_THROW(truncation_sweep({}, {}, {0.5}, client, SolveOptions{}, 1), Error);
}

}  // namespace
}  // namespace optexit::controller
