// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "optexit/trace/trace.hpp"

namespace optexit::analysis {

/// Token-Confidence: negative mean log-probability over the top-K slice.
/// Higher means a more peaked next-token distribution.
double token_confidence(const TokenRecord& record);

struct SignalSeries {
  std::string trace_id;
  std::vector<double> values;
};

enum class Signal { confidence, logprob };

SignalSeries signal_series(const Trace& trace, Signal signal);

struct EventLockedPoint {
  long offset = 0;
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t count = 0;
};

/// Aligns each series so its event position sits at offset 0 and averages
/// across the series covering each offset in [-pre, +post]. Offsets covered
/// by no series are omitted.
std::vector<EventLockedPoint> event_locked_average(std::span<const SignalSeries> series,
                                                   std::span<const std::size_t> positions,
                                                   std::size_t pre, std::size_t post);

struct ShiftPoint {
  std::string trace_id;
  double rate_before = 0.0;
  double rate_after = 0.0;
  std::size_t cot_length = 0;
};

/// Normalized needle match: lowercased, surrounding whitespace stripped.
bool token_matches(std::string_view token_text, std::string_view needle);

/// Occurrence rates of `needle` before [0, i*) and from [i*, M).
ShiftPoint token_shift_rates(const Trace& trace, std::size_t answer_index, std::string_view needle);

struct ShiftSummary {
  double above_diagonal_pct = 0.0;
  double at_origin_pct = 0.0;
  std::size_t n = 0;
};

ShiftSummary shift_summary(std::span<const ShiftPoint> points);

struct RateBin {
  double edge_lo = 0.0;
  double edge_hi = 0.0;
  double mean_before = 0.0;
  double mean_after = 0.0;
  double ci95_before = 0.0;  // half-width
  double ci95_after = 0.0;
  std::size_t n = 0;
};

/// Percentile-edged bins over cot_length. Bin k spans [edge_k, edge_{k+1}),
/// the last bin is closed. Empty bins are omitted.
std::vector<RateBin> rate_vs_length(std::span<const ShiftPoint> points, std::size_t bins = 10);

// CSV writers (header line included).
std::string event_lock_csv(std::span<const EventLockedPoint> points);
std::string shift_csv(std::span<const ShiftPoint> points);
std::string rate_length_csv(std::span<const RateBin> bins);

}  // namespace optexit::analysis
