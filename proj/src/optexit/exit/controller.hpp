// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "optexit/llm/client.hpp"
#include "optexit/probe/probe.hpp"
#include "optexit/trace/trace.hpp"

namespace optexit::controller {

enum class Warmup { require_full_window, allow_partial };

struct ExitConfig {
  std::size_t window = 10;
  std::size_t majority_min = 6;
  double prob_threshold = 0.7;
  std::size_t max_cot_tokens = 32768;
  Warmup warmup = Warmup::require_full_window;

  void validate() const;
};

enum class Decision { proceed, exit };

/// Online sliding-window majority vote over per-token probe bits.
class ExitSession {
 public:
  explicit ExitSession(const ExitConfig& config);

  /// Bits are forced to 0 while outside the think region.
  void set_in_think_region(bool inside) noexcept { in_think_ = inside; }
  bool in_think_region() const noexcept { return in_think_; }

  /// Consumes one token's probability. Throws SteppedAfterExit.
  Decision step(double p);
  Decision step_bit(bool bit);

  std::size_t tokens_seen() const noexcept { return tokens_seen_; }
  /// M_early: the 1-based count of tokens consumed when the exit fired.
  std::optional<std::size_t> exited_at() const noexcept { return exited_at_; }
  std::size_t ones_in_window() const noexcept { return ones_; }

 private:
  ExitConfig config_;
  std::vector<std::uint8_t> ring_;
  std::size_t next_ = 0;
  std::size_t filled_ = 0;
  std::size_t ones_ = 0;
  std::size_t tokens_seen_ = 0;
  std::optional<std::size_t> exited_at_;
  bool in_think_ = true;
};

/// M_early / M. Throws OutOfRange unless 1 <= M_early <= M.
double compression_rate(std::size_t m_early, std::size_t m);

/// Per-token probe outputs over a stored trace.
std::vector<double> probe_probabilities(const probe::ProbeModel& model, const FeatureMatrix& features);

/// Replays a probability stream through a fresh session. Positions outside
/// `region` contribute 0-bits. Returns M_early or nullopt.
std::optional<std::size_t> replay_exit(std::span<const double> probs, ThinkRegion region, const ExitConfig& config);

/// Result of one policy on one prompt.
struct ExitOutcome {
  std::string trace_id;
  std::string policy;
  std::string dataset;
  std::size_t m = 0;
  std::size_t m_early = 0;
  double cr = 1.0;
  std::string solution_text;
  std::string answer;
  std::string full_run_answer;
  bool matched_full_run_answer = false;
  bool exited = false;
  bool empty_think = false;
};

/// How truncated CoTs are turned into final answers.
struct SolveOptions {
  ChatTemplate chat;
  int max_tokens = 1024;
  /// Consulted only when the solution carries no \boxed{} answer.
  llm::LlmClient* pipeline = nullptr;
};

/// decoded(r[0, keep)) + think_close + "\n"
std::string continuation_prefix(std::span<const TokenRecord> tokens, std::size_t keep, const ChatTemplate& chat);

/// Asks the model to finish from a CoT truncated to `keep` tokens.
llm::Completion solve_truncated(llm::LlmClient& llm, std::string_view prompt, std::span<const TokenRecord> tokens,
                                std::size_t keep, const SolveOptions& options);

/// Normalized \boxed{} answer of a solution, else the pipeline extraction,
/// else empty.
std::string answer_from_solution(std::string_view solution, llm::LlmClient* pipeline);

/// Probe-driven policy over a stored trace; only the continuation after an
/// exit reaches the model.
ExitOutcome replay_optexit(const Trace& trace, const FeatureMatrix& features, const probe::ProbeModel& model,
                           const ExitConfig& config, const SolveOptions& options, llm::LlmClient& llm);

struct LiveOptions {
  ExitConfig exit;
  SolveOptions solve;
  int top_logprobs = 20;
  double temperature = 0.0;
  /// Full-run length and answer; a vanilla run supplies them when absent.
  std::optional<std::size_t> reference_length;
  std::optional<std::string> reference_answer;
};

struct VanillaRun {
  std::vector<TokenRecord> cot;  // excludes the closing marker
  std::string solution_text;
  std::string answer;
};

VanillaRun run_vanilla(std::string_view prompt, llm::LlmClient& llm, const LiveOptions& options);

/// Streams a fresh generation, scores each token online and injects the
/// think terminator on exit. Throws FeatureUnavailable for sidecar features.
ExitOutcome run_session(std::string_view trace_id, std::string_view prompt, const probe::ProbeModel& model,
                        probe::FeatureKind features, const LiveOptions& options, llm::LlmClient& llm);

// --- hindsight-optimal reasoning length --------------------------------

enum class HorlStrategy { exact_scan, grid };

HorlStrategy horl_strategy_from_string(std::string_view s);

/// True iff truncating after `i` tokens still yields the full-run answer.
using TruncationOracle = std::function<bool(std::size_t i)>;

/// Smallest succeeding i in 1..M (exact_scan), or the grid approximation;
/// M when nothing succeeds.
std::size_t horl_search(std::size_t m, const TruncationOracle& oracle, HorlStrategy strategy,
                        std::size_t grid_points = 21);

std::size_t horl(const Trace& trace, llm::LlmClient& llm, HorlStrategy strategy, std::size_t grid_points,
                 const SolveOptions& options);

// --- truncation sweep --------------------------------------------------

struct SweepPoint {
  double fraction = 0.0;
  double mean_accuracy = 0.0;
  double mean_cr = 0.0;
  std::size_t n = 0;
};

/// "lo:hi:step" or a comma list. Throws InvalidArgument.
std::vector<double> parse_fractions(std::string_view spec);

/// Tokens kept at fraction f of M (at least 1).
std::size_t truncation_length(double fraction, std::size_t m);

/// One point per fraction, ascending. ground_truth aligns with traces.
std::vector<SweepPoint> truncation_sweep(std::span<const Trace> traces, std::span<const std::string> ground_truth,
                                         std::vector<double> fractions, llm::LlmClient& llm,
                                         const SolveOptions& options, std::size_t max_inflight);

std::string sweep_csv(std::span<const SweepPoint> points);

}  // namespace optexit::controller
