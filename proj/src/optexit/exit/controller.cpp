// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include "optexit/exit/controller.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"
#include "optexit/curation/curation.hpp"

namespace optexit::controller {

void ExitConfig::validate() const {
  if (window < 1) throw Error(ErrorCode::InvalidArgument, "window must be >= 1");
  if (majority_min < 1 || majority_min > window) {
    throw Error(ErrorCode::InvalidArgument, "majority_min must be in [1, window]");
  }
  if (!(prob_threshold > 0.0 && prob_threshold < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "threshold must be in (0, 1)");
  }
  if (max_cot_tokens < 1) throw Error(ErrorCode::InvalidArgument, "max_cot_tokens must be >= 1");
}

ExitSession::ExitSession(const ExitConfig& config) : config_(config), ring_(config.window, 0) {
  config_.validate();
}

Decision ExitSession::step(double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidArgument, "probability outside [0, 1]");
  return step_bit(p >= config_.prob_threshold);
}

Decision ExitSession::step_bit(bool bit) {
  if (exited_at_) throw Error(ErrorCode::SteppedAfterExit, "session already exited");
  const std::uint8_t b = (bit && in_think_) ? 1 : 0;
  ones_ -= ring_[next_];
  ring_[next_] = b;
  ones_ += b;
  next_ = (next_ + 1) % ring_.size();
  filled_ = std::min(filled_ + 1, ring_.size());
  ++tokens_seen_;
  const bool ready = filled_ == ring_.size() || config_.warmup == Warmup::allow_partial;
  if (ready && ones_ >= config_.majority_min) {
    exited_at_ = tokens_seen_;
    return Decision::exit;
  }
  return Decision::proceed;
}

double compression_rate(std::size_t m_early, std::size_t m) {
  if (m_early < 1 || m_early > m) {
    throw Error(ErrorCode::OutOfRange,
                "compression rate needs 1 <= M_early <= M, got " + std::to_string(m_early) + "/" + std::to_string(m));
  }
  return static_cast<double>(m_early) / static_cast<double>(m);
}

std::vector<double> probe_probabilities(const probe::ProbeModel& model, const FeatureMatrix& features) {
  std::vector<double> out;
  out.reserve(features.rows);
  for (std::size_t r = 0; r < features.rows; ++r) out.push_back(model.predict(features.row(r)));
  return out;
}

std::optional<std::size_t> replay_exit(std::span<const double> probs, ThinkRegion region, const ExitConfig& config) {
  ExitSession session(config);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    session.set_in_think_region(i >= region.begin && i < region.end);
    if (session.step(probs[i]) == Decision::exit) return session.exited_at();
  }
  return std::nullopt;
}

std::string continuation_prefix(std::span<const TokenRecord> tokens, std::size_t keep, const ChatTemplate& chat) {
  return decoded_text(tokens, keep) + chat.think_close + "\n";
}

llm::Completion solve_truncated(llm::LlmClient& llm, std::string_view prompt, std::span<const TokenRecord> tokens,
                                std::size_t keep, const SolveOptions& options) {
  llm::LlmRequest req;
  req.role = llm::Role::solve_after_truncation;
  req.user_prompt = std::string(prompt);
  req.assistant_prefix = continuation_prefix(tokens, keep, options.chat);
  req.truncation_index = keep;
  req.max_tokens = options.max_tokens;
  return llm.complete(req);
}

std::string answer_from_solution(std::string_view solution, llm::LlmClient* pipeline) {
  if (auto boxed = curation::parse_boxed(solution)) {
    std::string a = curation::normalize_answer(*boxed);
    if (!a.empty()) return a;
  }
  if (!pipeline || trim(solution).empty()) return {};
  return curation::try_extract_answer(solution, pipeline);
}

namespace {

ExitOutcome finish(ExitOutcome o) {
  o.matched_full_run_answer = curation::answers_equal(o.answer, o.full_run_answer);
  return o;
}

}  // namespace

ExitOutcome replay_optexit(const Trace& trace, const FeatureMatrix& features, const probe::ProbeModel& model,
                           const ExitConfig& config, const SolveOptions& options, llm::LlmClient& llm) {
  if (features.rows != trace.length()) throw RowCountMismatch(trace.length(), features.rows);
  ExitOutcome o;
  o.trace_id = trace.trace_id;
  o.policy = "optexit";
  o.m = trace.length();
  o.full_run_answer = trace.final_answer.value_or("");
  const auto probs = probe_probabilities(model, features);
  const auto m_early = replay_exit(probs, think_region(trace.cot_tokens, options.chat), config);
  if (!m_early) {
    o.m_early = o.m;
    o.cr = 1.0;
    o.solution_text = trace.solution_text;
    o.answer = o.full_run_answer;
    return finish(std::move(o));
  }
  o.exited = true;
  o.m_early = *m_early;
  o.cr = compression_rate(o.m_early, o.m);
  o.solution_text = solve_truncated(llm, trace.prompt, trace.cot_tokens, o.m_early, options).text;
  o.answer = answer_from_solution(o.solution_text, options.pipeline);
  return finish(std::move(o));
}

namespace {

llm::LlmRequest generation_request(std::string_view prompt, const LiveOptions& options) {
  llm::LlmRequest req;
  req.role = llm::Role::generate;
  req.user_prompt = std::string(prompt);
  req.want_logprobs = true;
  req.top_logprobs = options.top_logprobs;
  req.temperature = options.temperature;
  req.max_tokens = static_cast<int>(options.exit.max_cot_tokens) + options.solve.max_tokens;
  return req;
}

}  // namespace

VanillaRun run_vanilla(std::string_view prompt, llm::LlmClient& llm, const LiveOptions& options) {
  VanillaRun run;
  bool thinking = true;
  llm.stream(generation_request(prompt, options), [&](const TokenRecord& t) {
    if (thinking) {
      if (is_marker(t, options.solve.chat.think_close)) {
        thinking = false;
      } else {
        run.cot.push_back(t);
      }
    } else {
      run.solution_text += t.token_text;
    }
    return true;
  });
  for (std::size_t i = 0; i < run.cot.size(); ++i) run.cot[i].index = i;
  run.answer = answer_from_solution(run.solution_text, options.solve.pipeline);
  return run;
}

ExitOutcome run_session(std::string_view trace_id, std::string_view prompt, const probe::ProbeModel& model,
                        probe::FeatureKind features, const LiveOptions& options, llm::LlmClient& llm) {
  if (features == probe::FeatureKind::sidecar) {
    throw Error(ErrorCode::FeatureUnavailable, "sidecar features cannot be computed on a live stream");
  }
  options.exit.validate();
  options.solve.chat.validate();

  ExitSession session(options.exit);
  probe::LogprobFeatures provider;
  std::vector<TokenRecord> cot;
  std::string solution;
  bool thinking = true;
  bool seen_open = false;
  bool capped = false;

  llm.stream(generation_request(prompt, options), [&](const TokenRecord& t) {
    if (!thinking) {
      solution += t.token_text;
      return true;
    }
    if (is_marker(t, options.solve.chat.think_close)) {
      thinking = false;
      return true;
    }
    cot.push_back(t);
    cot.back().index = cot.size() - 1;
    const auto x = provider.next(t);
    const double p = model.predict(std::span<const float>(x));
    const bool open_marker = !seen_open && is_marker(t, options.solve.chat.think_open);
    seen_open = seen_open || open_marker;
    session.set_in_think_region(!open_marker);
    if (session.step(p) == Decision::exit) return false;
    if (cot.size() >= options.exit.max_cot_tokens) {
      capped = true;
      return false;
    }
    return true;
  });

  ExitOutcome o;
  o.trace_id = std::string(trace_id);
  o.policy = "optexit";
  if (!session.exited_at() && !capped) {
    o.m = cot.size();
    o.m_early = o.m;
    o.cr = 1.0;
    o.solution_text = solution;
    o.answer = answer_from_solution(solution, options.solve.pipeline);
    o.full_run_answer = options.reference_answer.value_or(o.answer);
    return finish(std::move(o));
  }

  o.exited = session.exited_at().has_value();
  o.m_early = cot.size();
  std::size_t reference_m = 0;
  if (options.reference_length && options.reference_answer) {
    reference_m = *options.reference_length;
    o.full_run_answer = *options.reference_answer;
  } else {
    const VanillaRun full = run_vanilla(prompt, llm, options);
    reference_m = options.reference_length.value_or(full.cot.size());
    o.full_run_answer = options.reference_answer.value_or(full.answer);
  }
  o.m = std::max(reference_m, o.m_early);
  o.cr = compression_rate(o.m_early, o.m);
  o.solution_text = solve_truncated(llm, prompt, cot, o.m_early, options.solve).text;
  o.answer = answer_from_solution(o.solution_text, options.solve.pipeline);
  return finish(std::move(o));
}

// --- HORL ----------------------------------------------------------------

HorlStrategy horl_strategy_from_string(std::string_view s) {
  if (s == "exact" || s == "exact_scan") return HorlStrategy::exact_scan;
  if (s == "grid") return HorlStrategy::grid;
  throw Error(ErrorCode::InvalidArgument, "unknown HORL strategy '" + std::string(s) + "'");
}

std::size_t horl_search(std::size_t m, const TruncationOracle& oracle, HorlStrategy strategy,
                        std::size_t grid_points) {
  if (m == 0) throw Error(ErrorCode::InvalidArgument, "empty CoT");
  std::map<std::size_t, bool> memo;
  auto query = [&](std::size_t i) {
    auto [it, fresh] = memo.try_emplace(i, false);
    if (fresh) it->second = oracle(i);
    return it->second;
  };
  auto scan = [&](std::size_t lo, std::size_t hi) -> std::optional<std::size_t> {
    for (std::size_t i = lo; i <= hi; ++i) {
      if (query(i)) return i;
    }
    return std::nullopt;
  };
  if (strategy == HorlStrategy::exact_scan) return scan(1, m).value_or(m);

  if (grid_points < 2) throw Error(ErrorCode::InvalidArgument, "grid needs at least 2 points");
  const std::size_t step = (m + grid_points - 2) / (grid_points - 1);
  std::size_t prev = 0;
  for (std::size_t g = step; prev < m; g += step) {
    const std::size_t point = std::min(g, m);
    if (query(point)) return scan(prev + 1, point).value_or(point);
    prev = point;
  }
  return m;
}

std::size_t horl(const Trace& trace, llm::LlmClient& llm, HorlStrategy strategy, std::size_t grid_points,
                 const SolveOptions& options) {
  if (!trace.final_answer) throw Error(ErrorCode::InvalidArgument, trace.trace_id + ": full-run answer unknown");
  const std::string target = *trace.final_answer;
  return horl_search(
      trace.length(),
      [&](std::size_t i) {
        const auto c = solve_truncated(llm, trace.prompt, trace.cot_tokens, i, options);
        return curation::answers_equal(answer_from_solution(c.text, options.pipeline), target);
      },
      strategy, grid_points);
}

// --- sweep ---------------------------------------------------------------

namespace {

double parse_number(std::string_view s) {
  const std::string t = trim(s);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size()) {
    throw Error(ErrorCode::InvalidArgument, "not a number: '" + t + "'");
  }
  return v;
}

}  // namespace

std::vector<double> parse_fractions(std::string_view spec) {
  std::vector<double> out;
  if (spec.find(':') != std::string_view::npos) {
    const auto a = spec.find(':');
    const auto b = spec.find(':', a + 1);
    if (b == std::string_view::npos) throw Error(ErrorCode::InvalidArgument, "range must be lo:hi:step");
    const double lo = parse_number(spec.substr(0, a));
    const double hi = parse_number(spec.substr(a + 1, b - a - 1));
    const double step = parse_number(spec.substr(b + 1));
    if (!(step > 0.0)) throw Error(ErrorCode::InvalidArgument, "step must be > 0");
    for (std::size_t k = 0;; ++k) {
      // Snapped to 1e-9.
      const double f = std::round((lo + static_cast<double>(k) * step) * 1e9) / 1e9;
      if (f > hi + 1e-9) break;
      out.push_back(f);
    }
  } else {
    std::size_t start = 0;
    while (start <= spec.size()) {
      const auto comma = spec.find(',', start);
      const auto piece = spec.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
      out.push_back(parse_number(piece));
      if (comma == std::string_view::npos) break;
      start = comma + 1;
    }
  }
  for (double f : out) {
    if (!(f > 0.0 && f <= 1.0)) throw Error(ErrorCode::InvalidArgument, "fraction outside (0, 1]: " + format_double(f));
  }
  if (out.empty()) throw Error(ErrorCode::InvalidArgument, "no fractions");
  return out;
}

std::size_t truncation_length(double fraction, std::size_t m) {
  const double kept = std::ceil(fraction * static_cast<double>(m) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(kept, 1.0)), 1, m);
}

std::vector<SweepPoint> truncation_sweep(std::span<const Trace> traces, std::span<const std::string> ground_truth,
                                         std::vector<double> fractions, llm::LlmClient& llm,
                                         const SolveOptions& options, std::size_t max_inflight) {
  if (traces.size() != ground_truth.size()) {
    throw Error(ErrorCode::LengthMismatch, "ground truth count differs from trace count");
  }
  if (traces.empty()) throw Error(ErrorCode::EmptyInput, "no traces to sweep");
  std::sort(fractions.begin(), fractions.end());
  fractions.erase(std::unique(fractions.begin(), fractions.end()), fractions.end());

  std::vector<std::size_t> order(traces.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return traces[a].trace_id < traces[b].trace_id; });

  const std::size_t n = traces.size();
  std::vector<std::uint8_t> correct(fractions.size() * n, 0);
  std::vector<double> cr(fractions.size() * n, 0.0);
  parallel_for(fractions.size() * n, max_inflight, [&](std::size_t job) {
    const std::size_t fi = job / n;
    const Trace& t = traces[order[job % n]];
    const std::size_t keep = truncation_length(fractions[fi], t.length());
    const auto c = solve_truncated(llm, t.prompt, t.cot_tokens, keep, options);
    correct[job] = curation::answers_equal(answer_from_solution(c.text, options.pipeline),
                                           ground_truth[order[job % n]]);
    cr[job] = compression_rate(keep, t.length());
  });

  std::vector<SweepPoint> out;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi) {
    SweepPoint p;
    p.fraction = fractions[fi];
    p.n = n;
    double acc = 0.0;
    double sum_cr = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      acc += correct[fi * n + k];
      sum_cr += cr[fi * n + k];
    }
    p.mean_accuracy = acc / static_cast<double>(n);
    p.mean_cr = sum_cr / static_cast<double>(n);
    out.push_back(p);
  }
  return out;
}

std::string sweep_csv(std::span<const SweepPoint> points) {
  std::string out = "fraction,mean_accuracy,mean_cr,n\n";
  for (const auto& p : points) {
    out += csv_line({format_double(p.fraction), format_double(p.mean_accuracy), format_double(p.mean_cr),
                     std::to_string(p.n)});
  }
  return out;
}

}  // namespace optexit::controller
