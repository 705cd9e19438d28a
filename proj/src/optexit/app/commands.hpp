// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

// File-to-file pipeline commands. Each returns a JSON summary string.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "optexit/llm/client.hpp"

namespace optexit::app {

struct Endpoint {
  /// http(s)://host[:port][/v1], or mock:<script.jsonl> for an in-process mock.
  std::string url;
  std::string model = "default";
  long timeout_ms = 120000;
  int max_retries = 3;
  std::size_t max_inflight = 8;
};

std::unique_ptr<llm::LlmClient> make_client(const Endpoint& endpoint);

struct CurateOptions {
  std::string in;
  std::string out;
  std::string report;  // optional CSV
  std::string prompts;  // optional template file
  Endpoint pipeline;
  std::size_t max_retries = 4;
  double min_fuzzy = 0.9;
};
std::string curate(const CurateOptions& o);

struct TrainOptions {
  std::string data;  // labeled file or directory of labeled files
  std::string features = "logprob";
  std::string sidecar_dir;  // defaults to the data directory
  std::string out;
  std::string report;  // optional per-epoch CSV
  std::string arch = "linear";
  std::vector<std::size_t> hidden;
  double lr = 0.01;
  std::size_t epochs = 200;
  std::size_t batch = 256;
  std::size_t patience = 20;
  double val_fraction = 0.2;
  double tau = 0.7;
  std::uint64_t seed = 7;
};
std::string train_probe(const TrainOptions& o);

struct ExitOptions {
  std::size_t window = 10;
  std::size_t majority = 6;
  double tau = -1.0;  // negative: use the probe's own threshold
  std::size_t max_cot_tokens = 32768;
  bool allow_partial = false;
};

struct RunOptions {
  std::string prompts;  // prompts, trace or labeled file
  std::string probe;
  std::string features = "logprob";
  ExitOptions exit;
  Endpoint endpoint;
  Endpoint pipeline;  // optional
  std::string ground_truth;  // optional CSV trace_id,answer
  std::string dataset;
  std::string out;
  int top_logprobs = 20;
  int solution_max_tokens = 1024;
};
std::string run(const RunOptions& o);

struct EvaluateOptions {
  std::string dataset_path;  // trace or labeled file
  std::string policy = "optexit";  // comma list
  std::string probe;
  std::string features = "logprob";
  std::string sidecar_dir;
  ExitOptions exit;
  std::size_t deer_chunk = 64;
  double deer_threshold = 0.95;
  std::size_t dynasor_interval = 64;
  std::size_t dynasor_w = 8;
  Endpoint endpoint;
  Endpoint pipeline;
  std::string ground_truth;
  std::string dataset;
  std::string out;
  int solution_max_tokens = 1024;
};
std::string evaluate(const EvaluateOptions& o);

struct HorlOptions {
  std::string traces;
  std::string strategy = "exact";
  std::size_t grid_points = 21;
  Endpoint endpoint;
  Endpoint pipeline;
  std::string out;  // CSV trace_id,M,horl,fraction
};
std::string horl(const HorlOptions& o);

struct SweepOptions {
  std::string traces;
  std::string fractions = "0.05:1.0:0.05";
  std::string ground_truth;
  std::string labeled;  // optional, for the hindsight marker
  Endpoint endpoint;
  Endpoint pipeline;
  std::string out;
  std::string svg;
};
std::string sweep(const SweepOptions& o);

struct EventLockOptions {
  std::string labeled;
  std::string signal = "confidence";
  std::size_t pre = 50;
  std::size_t post = 50;
  std::size_t smooth = 1;  // SVG only
  std::string out;
  std::string svg;
};
std::string analyze_event_lock(const EventLockOptions& o);

struct TokenShiftOptions {
  std::string labeled;
  std::string needle = "wait";
  std::string out;
  std::string svg;
};
std::string analyze_token_shift(const TokenShiftOptions& o);

struct RateLengthOptions {
  std::string labeled;
  std::string needle = "wait";
  std::size_t bins = 10;
  std::string out;
  std::string svg;
};
std::string analyze_rate_length(const RateLengthOptions& o);

struct ReportOptions {
  /// Each entry is `path` or `path=dataset`; the file stem names the dataset
  /// when none is given.
  std::vector<std::string> results;
  std::string out;
  std::string svg;
};
std::string report(const ReportOptions& o);

struct ParetoOptions {
  std::string table;
  std::string dataset;  // required when the table holds several
  std::string out;
  std::string svg;
};
std::string pareto(const ParetoOptions& o);

}  // namespace optexit::app
