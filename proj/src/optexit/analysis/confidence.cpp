// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include "optexit/analysis/confidence.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"

namespace optexit::analysis {

double token_confidence(const TokenRecord& record) {
  if (record.top_k.empty()) throw Error(ErrorCode::EmptyTopK, "token " + std::to_string(record.index));
  // Running mean.
  double mean = 0.0;
  double n = 0.0;
  for (const auto& e : record.top_k) {
    n += 1.0;
    mean += (e.logprob - mean) / n;
  }
  return -mean;
}

SignalSeries signal_series(const Trace& trace, Signal signal) {
  SignalSeries s;
  s.trace_id = trace.trace_id;
  s.values.reserve(trace.length());
  for (const auto& t : trace.cot_tokens) {
    s.values.push_back(signal == Signal::confidence ? token_confidence(t) : t.chosen_logprob);
  }
  return s;
}

namespace {

struct Moments {
  double mean = 0.0;
  double sample_sd = 0.0;
};

Moments moments(std::span<const double> xs) {
  Moments m;
  if (xs.empty()) return m;
  m.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - m.mean) * (x - m.mean);
    m.sample_sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return m;
}

}  // namespace

std::vector<EventLockedPoint> event_locked_average(std::span<const SignalSeries> series,
                                                   std::span<const std::size_t> positions,
                                                   std::size_t pre, std::size_t post) {
  if (series.size() != positions.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(series.size()) + " series vs " +
                                               std::to_string(positions.size()) + " positions");
  }
  // Ascending trace_id order.
  std::vector<std::size_t> order(series.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return series[a].trace_id < series[b].trace_id; });
  for (std::size_t j = 0; j < series.size(); ++j) {
    if (positions[j] >= series[j].values.size()) {
      throw Error(ErrorCode::IndexOutOfRange, series[j].trace_id + ": event position outside series");
    }
  }
  std::vector<EventLockedPoint> out;
  std::vector<double> column;
  const long lo = -static_cast<long>(pre);
  const long hi = static_cast<long>(post);
  for (long o = lo; o <= hi; ++o) {
    column.clear();
    for (std::size_t j : order) {
      const long idx = static_cast<long>(positions[j]) + o;
      if (idx >= 0 && idx < static_cast<long>(series[j].values.size())) {
        column.push_back(series[j].values[static_cast<std::size_t>(idx)]);
      }
    }
    if (column.empty()) continue;
    const Moments m = moments(column);
    out.push_back(EventLockedPoint{o, m.mean, m.sample_sd / std::sqrt(static_cast<double>(column.size())),
                                   column.size()});
  }
  return out;
}

bool token_matches(std::string_view token_text, std::string_view needle) {
  return to_lower(trim(token_text)) == to_lower(trim(needle));
}

ShiftPoint token_shift_rates(const Trace& trace, std::size_t answer_index, std::string_view needle) {
  const std::size_t m = trace.length();
  if (answer_index >= m) throw Error(ErrorCode::IndexOutOfRange, trace.trace_id + ": i* >= M");
  std::size_t before = 0;
  std::size_t after = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (!token_matches(trace.cot_tokens[i].token_text, needle)) continue;
    (i < answer_index ? before : after) += 1;
  }
  ShiftPoint p;
  p.trace_id = trace.trace_id;
  p.cot_length = m;
  p.rate_before = answer_index == 0 ? 0.0 : static_cast<double>(before) / static_cast<double>(answer_index);
  p.rate_after = static_cast<double>(after) / static_cast<double>(m - answer_index);
  return p;
}

ShiftSummary shift_summary(std::span<const ShiftPoint> points) {
  if (points.empty()) throw Error(ErrorCode::EmptyInput, "shift_summary needs at least one point");
  std::size_t above = 0;
  std::size_t origin = 0;
  for (const auto& p : points) {
    if (p.rate_after > p.rate_before) ++above;
    if (p.rate_after == 0.0 && p.rate_before == 0.0) ++origin;
  }
  const double n = static_cast<double>(points.size());
  return ShiftSummary{100.0 * static_cast<double>(above) / n, 100.0 * static_cast<double>(origin) / n,
                      points.size()};
}

std::vector<RateBin> rate_vs_length(std::span<const ShiftPoint> points, std::size_t bins) {
  if (bins == 0) throw Error(ErrorCode::InvalidArgument, "bins must be >= 1");
  if (points.size() < bins) {
    throw Error(ErrorCode::TooFewPoints, std::to_string(points.size()) + " points for " +
                                             std::to_string(bins) + " bins");
  }
  std::vector<std::size_t> order(points.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (points[a].cot_length != points[b].cot_length) return points[a].cot_length < points[b].cot_length;
    return points[a].trace_id < points[b].trace_id;
  });
  const std::size_t n = points.size();
  std::vector<double> edges(bins + 1);
  for (std::size_t k = 0; k < bins; ++k) {
    edges[k] = static_cast<double>(points[order[k * n / bins]].cot_length);
  }
  edges[bins] = static_cast<double>(points[order.back()].cot_length);

  std::vector<RateBin> out;
  std::vector<double> before;
  std::vector<double> after;
  for (std::size_t k = 0; k < bins; ++k) {
    const bool last = k + 1 == bins;
    before.clear();
    after.clear();
    for (std::size_t idx : order) {
      const double len = static_cast<double>(points[idx].cot_length);
      const bool inside = len >= edges[k] && (last ? len <= edges[k + 1] : len < edges[k + 1]);
      if (!inside) continue;
      before.push_back(points[idx].rate_before);
      after.push_back(points[idx].rate_after);
    }
    if (before.empty()) continue;
    const Moments mb = moments(before);
    const Moments ma = moments(after);
    const double root_n = std::sqrt(static_cast<double>(before.size()));
    out.push_back(RateBin{edges[k], edges[k + 1], mb.mean, ma.mean, 1.96 * mb.sample_sd / root_n,
                          1.96 * ma.sample_sd / root_n, before.size()});
  }
  return out;
}

std::string event_lock_csv(std::span<const EventLockedPoint> points) {
  std::string out = "offset,mean,stderr,count\n";
  for (const auto& p : points) {
    out += csv_line({std::to_string(p.offset), format_double(p.mean), format_double(p.stderr_),
                     std::to_string(p.count)});
  }
  return out;
}

std::string shift_csv(std::span<const ShiftPoint> points) {
  std::string out = "trace_id,rate_before,rate_after,cot_length\n";
  for (const auto& p : points) {
    out += csv_line({p.trace_id, format_double(p.rate_before), format_double(p.rate_after),
                     std::to_string(p.cot_length)});
  }
  return out;
}

std::string rate_length_csv(std::span<const RateBin> bins) {
  std::string out = "bin_lo,bin_hi,mean_before,ci95_before,mean_after,ci95_after,n\n";
  for (const auto& b : bins) {
    out += csv_line({format_double(b.edge_lo), format_double(b.edge_hi), format_double(b.mean_before),
                     format_double(b.ci95_before), format_double(b.mean_after), format_double(b.ci95_after),
                     std::to_string(b.n)});
  }
  return out;
}

}  // namespace optexit::analysis
