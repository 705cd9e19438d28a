// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include "optexit/report/report.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"

namespace optexit::report {

ResultRow to_row(const controller::ExitOutcome& o, bool correct) {
  return ResultRow{o.trace_id, o.policy, o.dataset, o.m, o.m_early, o.cr, o.answer, correct};
}

std::string results_csv(std::span<const ResultRow> rows) {
  std::string out = "trace_id,policy,M,M_early,cr,answer,correct\n";
  for (const auto& r : rows) {
    out += csv_line({r.trace_id, r.policy, std::to_string(r.m), std::to_string(r.m_early), format_double(r.cr),
                     r.answer, r.correct ? "1" : "0"});
  }
  return out;
}

namespace {

template <typename T>
T parse_field(const std::string& s, std::size_t line, const char* field) {
  T v{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw SchemaError(line, field, "bad value '" + s + "'");
  return v;
}

}  // namespace

std::vector<ResultRow> read_results(const std::filesystem::path& path, const std::string& dataset) {
  const CsvTable t = read_csv(path);
  const std::size_t c_id = t.column("trace_id"), c_pol = t.column("policy"), c_m = t.column("M"),
                    c_me = t.column("M_early"), c_cr = t.column("cr"), c_ans = t.column("answer"),
                    c_ok = t.column("correct");
  std::vector<ResultRow> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::size_t line = i + 2;
    if (r.size() != t.header.size()) throw SchemaError(line, "row", "column count differs from header");
    ResultRow row;
    row.trace_id = r[c_id];
    row.policy = r[c_pol];
    row.dataset = dataset;
    row.m = parse_field<std::size_t>(r[c_m], line, "M");
    row.m_early = parse_field<std::size_t>(r[c_me], line, "M_early");
    row.cr = parse_field<double>(r[c_cr], line, "cr");
    row.answer = r[c_ans];
    if (r[c_ok] != "0" && r[c_ok] != "1") throw SchemaError(line, "correct", "expected 0 or 1");
    row.correct = r[c_ok] == "1";
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<BenchmarkRow> report(std::span<const ResultRow> results) {
  if (results.empty()) throw Error(ErrorCode::EmptyResults, "no results to report");
  struct Acc {
    std::size_t n = 0, correct = 0;
    double tokens = 0.0, cr = 0.0;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;
  for (const auto& r : results) {
    Acc& a = groups[{r.dataset, r.policy}];
    ++a.n;
    a.correct += r.correct;
    a.tokens += static_cast<double>(r.m_early);
    a.cr += r.cr;
  }
  std::vector<BenchmarkRow> out;
  for (const auto& [key, a] : groups) {
    const double n = static_cast<double>(a.n);
    out.push_back(BenchmarkRow{key.second, key.first, 100.0 * static_cast<double>(a.correct) / n, a.tokens / n,
                               100.0 * a.cr / n, a.n});
  }
  return out;
}

std::vector<BenchmarkRow> pareto(std::span<const BenchmarkRow> rows) {
  for (const auto& r : rows) {
    if (r.dataset != rows.front().dataset) {
      throw Error(ErrorCode::MixedDatasets, "pareto rows span datasets '" + rows.front().dataset + "' and '" +
                                                r.dataset + "'");
    }
  }
  std::vector<BenchmarkRow> out;
  for (const auto& r : rows) {
    const bool dominated = std::any_of(rows.begin(), rows.end(), [&](const BenchmarkRow& o) {
      return o.accuracy_pct >= r.accuracy_pct && o.mean_cr_pct <= r.mean_cr_pct &&
             (o.accuracy_pct > r.accuracy_pct || o.mean_cr_pct < r.mean_cr_pct);
    });
    if (!dominated) out.push_back(r);
  }
  return out;
}

std::string table_csv(std::span<const BenchmarkRow> rows) {
  std::string out = "policy,dataset,accuracy_pct,mean_tokens,mean_cr_pct,n\n";
  for (const auto& r : rows) {
    out += csv_line({r.policy, r.dataset, format_fixed(r.accuracy_pct, 1), format_fixed(r.mean_tokens, 1),
                     format_fixed(r.mean_cr_pct, 1), std::to_string(r.n)});
  }
  return out;
}

std::vector<BenchmarkRow> read_table(const std::filesystem::path& path) {
  const CsvTable t = read_csv(path);
  const std::size_t c_pol = t.column("policy"), c_ds = t.column("dataset"), c_acc = t.column("accuracy_pct"),
                    c_tok = t.column("mean_tokens"), c_cr = t.column("mean_cr_pct"), c_n = t.column("n");
  std::vector<BenchmarkRow> out;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    const std::size_t line = i + 2;
    if (r.size() != t.header.size()) throw SchemaError(line, "row", "column count differs from header");
    out.push_back(BenchmarkRow{r[c_pol], r[c_ds], parse_field<double>(r[c_acc], line, "accuracy_pct"),
                               parse_field<double>(r[c_tok], line, "mean_tokens"),
                               parse_field<double>(r[c_cr], line, "mean_cr_pct"),
                               parse_field<std::size_t>(r[c_n], line, "n")});
  }
  return out;
}

// --- SVG -------------------------------------------------------------------

namespace {

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out.push_back(c);
    }
  }
  return out;
}

constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

}  // namespace

std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     std::span<const Series> series, std::optional<double> marker_x) {
  constexpr double W = 640, H = 420, L = 70, R = 160, T = 40, B = 50;
  double x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  bool first = true;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      if (!std::isfinite(x) || !std::isfinite(y)) continue;
      if (first) {
        x0 = x1 = x;
        y0 = y1 = y;
        first = false;
      }
      x0 = std::min(x0, x), x1 = std::max(x1, x), y0 = std::min(y0, y), y1 = std::max(y1, y);
    }
  }
  if (marker_x) x0 = std::min(x0, *marker_x), x1 = std::max(x1, *marker_x);
  if (x1 - x0 < 1e-12) x0 -= 0.5, x1 += 0.5;
  if (y1 - y0 < 1e-12) y0 -= 0.5, y1 += 0.5;
  const double pw = W - L - R, ph = H - T - B;
  auto px = [&](double x) { return format_fixed(L + (x - x0) / (x1 - x0) * pw, 2); };
  auto py = [&](double y) { return format_fixed(T + ph - (y - y0) / (y1 - y0) * ph, 2); };

  std::string out = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"640\" height=\"420\" viewBox=\"0 0 640 420\">\n";
  out += "<rect width=\"640\" height=\"420\" fill=\"white\"/>\n";
  out += "<text x=\"320\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">" +
         xml_escape(title) + "</text>\n";
  out += "<rect x=\"" + format_fixed(L, 0) + "\" y=\"" + format_fixed(T, 0) + "\" width=\"" + format_fixed(pw, 0) +
         "\" height=\"" + format_fixed(ph, 0) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double xv = x0 + (x1 - x0) * k / 4.0;
    const double yv = y0 + (y1 - y0) * k / 4.0;
    out += "<text x=\"" + px(xv) + "\" y=\"" + format_fixed(H - B + 16, 0) +
           "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" + format_fixed(xv, 2) +
           "</text>\n";
    out += "<text x=\"" + format_fixed(L - 6, 0) + "\" y=\"" + py(yv) +
           "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" + format_fixed(yv, 2) + "</text>\n";
  }
  out += "<text x=\"" + format_fixed(L + pw / 2, 0) + "\" y=\"" + format_fixed(H - 10, 0) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" + xml_escape(x_label) + "</text>\n";
  out += "<text x=\"16\" y=\"" + format_fixed(T + ph / 2, 0) + "\" transform=\"rotate(-90 16 " +
         format_fixed(T + ph / 2, 0) + ")\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" +
         xml_escape(y_label) + "</text>\n";
  if (marker_x) {
    out += "<line x1=\"" + px(*marker_x) + "\" y1=\"" + format_fixed(T, 0) + "\" x2=\"" + px(*marker_x) + "\" y2=\"" +
           format_fixed(T + ph, 0) + "\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>\n";
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const char* color = kPalette[s % std::size(kPalette)];
    std::vector<std::pair<double, double>> pts;
    for (const auto& p : series[s].points) {
      if (std::isfinite(p.first) && std::isfinite(p.second)) pts.push_back(p);
    }
    if (series[s].connect && pts.size() > 1) {
      std::string d;
      for (const auto& [x, y] : pts) d += (d.empty() ? "" : " ") + px(x) + "," + py(y);
      out += "<polyline fill=\"none\" stroke=\"" + std::string(color) + "\" stroke-width=\"1.5\" points=\"" + d +
             "\"/>\n";
    }
    for (const auto& [x, y] : pts) {
      out += "<circle cx=\"" + px(x) + "\" cy=\"" + py(y) + "\" r=\"3\" fill=\"" + color + "\"/>\n";
    }
    const double ly = T + 14 + 18 * static_cast<double>(s);
    out += "<rect x=\"" + format_fixed(W - R + 12, 0) + "\" y=\"" + format_fixed(ly - 9, 0) +
           "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
    out += "<text x=\"" + format_fixed(W - R + 28, 0) + "\" y=\"" + format_fixed(ly, 0) +
           "\" font-family=\"sans-serif\" font-size=\"11\">" + xml_escape(series[s].name) + "</text>\n";
  }
  out += "</svg>\n";
  return out;
}

}  // namespace optexit::report
