// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

// Synthetic traces and a matching mock script for offline end-to-end runs.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "optexit/llm/mock.hpp"
#include "optexit/probe/probe.hpp"
#include "optexit/trace/trace.hpp"

namespace optexit::testing {

struct CorpusOptions {
  std::size_t n_traces = 20;
  std::uint64_t seed = 11;
  std::size_t min_m = 60;
  std::size_t max_m = 120;
  double answer_lo = 0.25;  // answer token index as a fraction of M
  double answer_hi = 0.45;
  std::size_t k = 4;
};

/// Every CoT starts with `<think>`, states " so the answer is N" in the five
/// tokens before index a, and switches from flat to peaked top-K slices at a.
struct Corpus {
  std::vector<Trace> traces;  // final_answer unset
  std::vector<std::size_t> answer_index;
  std::vector<std::string> answers;
  /// generate, identify, verify and answer_from_index(a) entries per trace.
  std::vector<llm::MockEntry> entries;

  llm::MockScript script() const { return llm::MockScript(entries); }
};

Corpus make_corpus(const CorpusOptions& options = {});

inline std::string answer_span(const std::string& answer) { return "so the answer is " + answer; }
inline std::string solution_for(const std::string& answer) { return "The answer is \\boxed{" + answer + "}."; }

/// Per-token examples with labels 1 from a random index on; feature 0 is
/// +-(margin/2 + U[0,1)) by label, the others uniform noise in [-1, 1).
std::vector<probe::TrainExample> separable_dataset(std::size_t n_traces, double margin, std::uint64_t seed,
                                                   std::size_t dim = 4);

/// Random valid trace with K-sized sorted top-K slices and assorted text.
Trace random_trace(std::uint64_t seed, std::size_t index);

/// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace optexit::testing
