// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "optexit/exit/controller.hpp"

namespace optexit::report {

/// One line of a results file.
struct ResultRow {
  std::string trace_id;
  std::string policy;
  std::string dataset;
  std::size_t m = 0;
  std::size_t m_early = 0;
  double cr = 0.0;
  std::string answer;
  bool correct = false;
};

ResultRow to_row(const controller::ExitOutcome& outcome, bool correct);

/// `trace_id,policy,M,M_early,cr,answer,correct`
std::string results_csv(std::span<const ResultRow> rows);
std::vector<ResultRow> read_results(const std::filesystem::path& path, const std::string& dataset);

struct BenchmarkRow {
  std::string policy;
  std::string dataset;
  double accuracy_pct = 0.0;
  double mean_tokens = 0.0;
  double mean_cr_pct = 0.0;
  std::size_t n = 0;
};

/// One row per (dataset, policy), sorted. Throws EmptyResults.
std::vector<BenchmarkRow> report(std::span<const ResultRow> results);

/// Non-dominated rows in input order. Throws MixedDatasets.
std::vector<BenchmarkRow> pareto(std::span<const BenchmarkRow> rows);

/// `policy,dataset,accuracy_pct,mean_tokens,mean_cr_pct,n`, one decimal.
std::string table_csv(std::span<const BenchmarkRow> rows);
std::vector<BenchmarkRow> read_table(const std::filesystem::path& path);

// --- SVG ---------------------------------------------------------------

struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
  bool connect = true;
};

/// Self-contained line/scatter plot with fixed layout.
std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     std::span<const Series> series, std::optional<double> marker_x = std::nullopt);

}  // namespace optexit::report
