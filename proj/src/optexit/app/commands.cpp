// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include "optexit/app/commands.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>

#include <json.hpp>

#include "optexit/analysis/confidence.hpp"
#include "optexit/baselines/baselines.hpp"
#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"
#include "optexit/curation/curation.hpp"
#include "optexit/exit/controller.hpp"
#include "optexit/llm/mock.hpp"
#include "optexit/probe/probe.hpp"
#include "optexit/report/report.hpp"

namespace optexit::app {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

std::unique_ptr<llm::LlmClient> make_client(const Endpoint& e) {
  if (e.url.empty()) throw Error(ErrorCode::InvalidArgument, "no endpoint configured");
  if (e.url.starts_with("mock:")) {
    return std::make_unique<llm::MockLlmClient>(llm::MockScript::load(e.url.substr(5)));
  }
  llm::EndpointConfig cfg;
  cfg.url = e.url;
  cfg.model = e.model;
  cfg.api_key = llm::api_key_from_env();
  cfg.timeout = std::chrono::milliseconds(e.timeout_ms);
  cfg.retry.max_retries = e.max_retries;
  cfg.max_inflight = e.max_inflight;
  return std::make_unique<llm::HttpLlmClient>(cfg);
}

namespace {

std::unique_ptr<llm::LlmClient> optional_client(const Endpoint& e) {
  return e.url.empty() ? nullptr : make_client(e);
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw Error(ErrorCode::InvalidArgument, std::string("missing required ") + flag);
}

/// Traces from a trace or labeled file, with i* when labeled.
struct LoadedDataset {
  std::vector<Trace> traces;
  std::vector<LabeledTrace> labeled;
};

LoadedDataset load_dataset(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  const std::string text = read_file(path);
  const auto first_end = text.find('\n');
  LoadedDataset d;
  if (text.substr(0, first_end).find("\"labels\"") != std::string::npos) {
    d.labeled = parse_labeled(text);
    for (const auto& lt : d.labeled) d.traces.push_back(lt.trace);
  } else {
    d.traces = parse_traces(text);
  }
  return d;
}

std::map<std::string, std::string> load_ground_truth(const std::string& path) {
  std::map<std::string, std::string> out;
  if (path.empty()) return out;
  const CsvTable t = read_csv(path);
  const std::size_t c_id = t.column("trace_id");
  const std::size_t c_ans = t.column("answer");
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i].size() != t.header.size()) throw SchemaError(i + 2, "row", "column count differs from header");
    out[t.rows[i][c_id]] = t.rows[i][c_ans];
  }
  return out;
}

/// Ground truth when known, else the full-run answer.
std::string truth_for(const std::map<std::string, std::string>& gt, const std::string& id,
                      const std::string& full_run_answer) {
  const auto it = gt.find(id);
  return it != gt.end() ? it->second : full_run_answer;
}

std::string dataset_name(const std::string& explicit_name, const fs::path& path) {
  return explicit_name.empty() ? path.stem().string() : explicit_name;
}

controller::ExitConfig exit_config(const ExitOptions& o, const probe::ProbeModel* model) {
  controller::ExitConfig c;
  c.window = o.window;
  c.majority_min = o.majority;
  c.prob_threshold = o.tau >= 0.0 ? o.tau : (model ? model->threshold() : 0.7);
  c.max_cot_tokens = o.max_cot_tokens;
  c.warmup = o.allow_partial ? controller::Warmup::allow_partial : controller::Warmup::require_full_window;
  c.validate();
  return c;
}

void write_svg(const std::string& path, const std::string& svg) {
  if (!path.empty()) write_file(path, svg);
}

std::vector<LabeledTrace> load_labeled_inputs(const fs::path& data) {
  if (!fs::exists(data)) throw Error(ErrorCode::MissingFile, data.string());
  if (!fs::is_directory(data)) return load_labeled(data);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(data)) {
    if (e.is_regular_file() && e.path().extension() == ".jsonl") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<LabeledTrace> out;
  for (const auto& f : files) {
    auto part = load_labeled(f);
    out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  if (out.empty()) throw Error(ErrorCode::EmptyInput, data.string() + " holds no labeled traces");
  return out;
}

}  // namespace

// --- curate ------------------------------------------------------------------

std::string curate(const CurateOptions& o) {
  require(o.in, "--in");
  require(o.out, "--out");
  const auto traces = load_traces(o.in);
  const auto client = make_client(o.pipeline);
  curation::CurationConfig cfg;
  cfg.max_retries = o.max_retries;
  cfg.min_fuzzy_score = o.min_fuzzy;
  cfg.max_inflight = o.pipeline.max_inflight;
  if (!o.prompts.empty()) cfg.prompts = curation::load_prompt_templates(o.prompts);
  cfg.validate();

  curation::Dataset ds;
  curation::CurationReport partial;
  try {
    ds = curation::assemble_dataset(traces, cfg, *client, &partial);
  } catch (const Error& e) {
    if (!o.report.empty() && !partial.records.empty()) write_file(o.report, partial.csv());
    throw;
  }
  save_labeled(o.out, ds.labeled);
  if (!o.report.empty()) write_file(o.report, ds.report.csv());
  json j;
  j["command"] = "curate";
  j["total"] = ds.report.records.size();
  j["succeeded"] = ds.report.succeeded;
  j["success_rate"] = ds.report.success_rate();
  return j.dump();
}

// --- train-probe ---------------------------------------------------------------

std::string train_probe(const TrainOptions& o) {
  require(o.data, "--data");
  require(o.out, "--out");
  const auto labeled = load_labeled_inputs(o.data);
  const auto kind = probe::feature_kind_from_string(o.features);
  fs::path sidecars = o.sidecar_dir;
  if (sidecars.empty()) sidecars = fs::is_directory(o.data) ? fs::path(o.data) : fs::path(o.data).parent_path();

  std::vector<probe::TrainExample> examples;
  examples.reserve(labeled.size());
  for (const auto& lt : labeled) {
    examples.push_back(probe::TrainExample{probe::features_for(lt.trace, kind, sidecars), lt.labels, lt.loss_mask});
  }
  probe::TrainConfig cfg;
  cfg.arch = probe::arch_from_string(o.arch);
  cfg.hidden = o.hidden;
  cfg.learning_rate = o.lr;
  cfg.max_epochs = o.epochs;
  cfg.batch_size = o.batch;
  cfg.early_stop_patience = o.patience;
  cfg.validation_fraction = o.val_fraction;
  cfg.threshold = o.tau;
  cfg.seed = o.seed;
  const auto result = probe::train(examples, cfg);
  probe::save_model(o.out, result.model);
  if (!o.report.empty()) {
    std::string csv = "epoch,train_loss,val_macro_f1\n";
    for (const auto& e : result.report.epochs) {
      csv += csv_line({std::to_string(e.epoch), format_double(e.train_loss), format_double(e.val_macro_f1)});
    }
    write_file(o.report, csv);
  }
  json j;
  j["command"] = "train-probe";
  j["traces"] = labeled.size();
  j["train_traces"] = result.report.train_traces;
  j["val_traces"] = result.report.val_traces;
  j["epochs_run"] = result.report.epochs.size();
  j["best_epoch"] = result.report.best_epoch;
  j["best_val_macro_f1"] = result.report.best_val_macro_f1;
  j["w0"] = result.report.class_weights.w0;
  j["w1"] = result.report.class_weights.w1;
  return j.dump();
}

// --- run (live) ----------------------------------------------------------------

namespace {

json outcome_summary(const std::vector<report::ResultRow>& rows) {
  json j;
  j["n"] = rows.size();
  if (rows.empty()) return j;
  double cr = 0.0;
  std::size_t correct = 0;
  for (const auto& r : rows) {
    cr += r.cr;
    correct += r.correct;
  }
  j["mean_cr"] = cr / static_cast<double>(rows.size());
  j["accuracy"] = static_cast<double>(correct) / static_cast<double>(rows.size());
  return j;
}

}  // namespace

std::string run(const RunOptions& o) {
  require(o.prompts, "--prompts");
  require(o.probe, "--probe");
  require(o.out, "--out");
  const auto items = load_prompts(o.prompts);
  const auto model = probe::load_model(o.probe);
  const auto kind = probe::feature_kind_from_string(o.features);
  const auto client = make_client(o.endpoint);
  const auto pipeline = optional_client(o.pipeline);
  const auto gt = load_ground_truth(o.ground_truth);

  controller::LiveOptions live;
  live.exit = exit_config(o.exit, &model);
  live.solve.max_tokens = o.solution_max_tokens;
  live.solve.pipeline = pipeline.get();
  live.top_logprobs = o.top_logprobs;

  std::vector<report::ResultRow> rows(items.size());
  std::vector<std::uint8_t> matched(items.size(), 0);
  parallel_for(items.size(), o.endpoint.max_inflight, [&](std::size_t i) {
    controller::LiveOptions opts = live;
    opts.reference_length = items[i].reference_length;
    opts.reference_answer = items[i].final_answer;
    auto outcome = controller::run_session(items[i].trace_id, items[i].prompt, model, kind, opts, *client);
    outcome.dataset = dataset_name(o.dataset, o.prompts);
    matched[i] = outcome.matched_full_run_answer;
    const bool ok = curation::answers_equal(outcome.answer, truth_for(gt, outcome.trace_id, outcome.full_run_answer));
    rows[i] = report::to_row(outcome, ok);
  });
  std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) { return a.trace_id < b.trace_id; });
  write_file(o.out, report::results_csv(rows));
  json j = outcome_summary(rows);
  j["command"] = "run";
  j["matched_full_run"] = std::accumulate(matched.begin(), matched.end(), std::size_t{0});
  return j.dump();
}

// --- evaluate (replay) -----------------------------------------------------------

std::string evaluate(const EvaluateOptions& o) {
  require(o.dataset_path, "--dataset");
  require(o.out, "--out");
  const auto data = load_dataset(o.dataset_path);
  const auto gt = load_ground_truth(o.ground_truth);
  const std::string ds_name = dataset_name(o.dataset, o.dataset_path);

  std::vector<std::string> policies;
  for (std::size_t start = 0;;) {
    const auto comma = o.policy.find(',', start);
    const std::string p = trim(o.policy.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (p != "vanilla" && p != "nothinking" && p != "deer" && p != "dynasor" && p != "optexit") {
      throw Error(ErrorCode::InvalidArgument, "unknown policy '" + p + "'");
    }
    policies.push_back(p);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  const bool needs_llm = std::any_of(policies.begin(), policies.end(), [](const auto& p) { return p != "vanilla"; });
  const auto client = needs_llm ? make_client(o.endpoint) : nullptr;
  const auto pipeline = optional_client(o.pipeline);

  std::optional<probe::ProbeModel> model;
  if (std::find(policies.begin(), policies.end(), "optexit") != policies.end()) {
    require(o.probe, "--probe");
    model = probe::load_model(o.probe);
  }
  const auto kind = probe::feature_kind_from_string(o.features);
  const fs::path sidecars = o.sidecar_dir.empty() ? fs::path(o.dataset_path).parent_path() : fs::path(o.sidecar_dir);
  const controller::ExitConfig exit_cfg = exit_config(o.exit, model ? &*model : nullptr);
  controller::SolveOptions solve;
  solve.max_tokens = o.solution_max_tokens;
  solve.pipeline = pipeline.get();
  baselines::DeerConfig deer_cfg{o.deer_chunk, o.deer_threshold};
  deer_cfg.validate();
  baselines::DynasorConfig dyn_cfg;
  dyn_cfg.interval_tokens = o.dynasor_interval;
  dyn_cfg.consistency_w = o.dynasor_w;
  dyn_cfg.validate();

  std::vector<std::size_t> order(data.traces.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return data.traces[a].trace_id < data.traces[b].trace_id; });
  const std::size_t n = order.size();
  std::vector<report::ResultRow> rows(policies.size() * n);
  parallel_for(rows.size(), o.endpoint.max_inflight, [&](std::size_t job) {
    const std::string& policy = policies[job / n];
    const Trace& t = data.traces[order[job % n]];
    controller::ExitOutcome out;
    if (policy == "vanilla") {
      out = baselines::vanilla(t);
    } else if (policy == "nothinking") {
      out = baselines::nothinking(t.trace_id, t.prompt, t.length(), t.final_answer, solve, *client);
    } else if (policy == "deer") {
      out = baselines::deer(t, deer_cfg, solve, *client);
    } else if (policy == "dynasor") {
      out = baselines::dynasor(t, dyn_cfg, solve, *client);
    } else {
      out = controller::replay_optexit(t, probe::features_for(t, kind, sidecars), *model, exit_cfg, solve, *client);
    }
    out.dataset = ds_name;
    const bool ok = curation::answers_equal(out.answer, truth_for(gt, t.trace_id, t.final_answer.value_or("")));
    rows[job] = report::to_row(out, ok);
  });
  write_file(o.out, report::results_csv(rows));

  json j;
  j["command"] = "evaluate";
  j["dataset"] = ds_name;
  json per = json::object();
  for (std::size_t p = 0; p < policies.size(); ++p) {
    per[policies[p]] = outcome_summary(std::vector<report::ResultRow>(rows.begin() + static_cast<long>(p * n),
                                                                      rows.begin() + static_cast<long>((p + 1) * n)));
  }
  j["policies"] = per;
  return j.dump();
}

// --- horl ------------------------------------------------------------------------

std::string horl(const HorlOptions& o) {
  require(o.traces, "--traces");
  require(o.out, "--out");
  const auto data = load_dataset(o.traces);
  const auto client = make_client(o.endpoint);
  const auto pipeline = optional_client(o.pipeline);
  const auto strategy = controller::horl_strategy_from_string(o.strategy);
  controller::SolveOptions solve;
  solve.pipeline = pipeline.get();

  std::vector<std::size_t> order(data.traces.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return data.traces[a].trace_id < data.traces[b].trace_id; });
  std::vector<std::size_t> result(order.size());
  parallel_for(order.size(), o.endpoint.max_inflight, [&](std::size_t k) {
    result[k] = controller::horl(data.traces[order[k]], *client, strategy, o.grid_points, solve);
  });
  std::string csv = "trace_id,M,horl,fraction\n";
  double sum = 0.0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const Trace& t = data.traces[order[k]];
    const double f = static_cast<double>(result[k]) / static_cast<double>(t.length());
    sum += f;
    csv += csv_line({t.trace_id, std::to_string(t.length()), std::to_string(result[k]), format_double(f)});
  }
  write_file(o.out, csv);
  json j;
  j["command"] = "horl";
  j["n"] = order.size();
  j["mean_fraction"] = order.empty() ? 0.0 : sum / static_cast<double>(order.size());
  return j.dump();
}

// --- sweep -----------------------------------------------------------------------

std::string sweep(const SweepOptions& o) {
  require(o.traces, "--traces");
  require(o.out, "--out");
  const auto data = load_dataset(o.traces);
  const auto gt = load_ground_truth(o.ground_truth);
  const auto client = make_client(o.endpoint);
  const auto pipeline = optional_client(o.pipeline);
  controller::SolveOptions solve;
  solve.pipeline = pipeline.get();

  std::vector<std::string> truth;
  for (const auto& t : data.traces) truth.push_back(truth_for(gt, t.trace_id, t.final_answer.value_or("")));
  const auto points = controller::truncation_sweep(data.traces, truth, controller::parse_fractions(o.fractions),
                                                   *client, solve, o.endpoint.max_inflight);
  write_file(o.out, controller::sweep_csv(points));

  std::optional<double> marker;
  auto labeled = data.labeled;
  if (!o.labeled.empty()) labeled = load_labeled(o.labeled);
  if (!labeled.empty()) {
    double sum = 0.0;
    for (const auto& lt : labeled) {
      sum += static_cast<double>(lt.answer.token_index + 1) / static_cast<double>(lt.trace.length());
    }
    marker = sum / static_cast<double>(labeled.size());
  }
  if (!o.svg.empty()) {
    report::Series acc{"accuracy", {}, true};
    for (const auto& p : points) acc.points.emplace_back(p.fraction, p.mean_accuracy);
    write_svg(o.svg, report::svg_plot("Truncation sweep", "fraction of CoT kept", "accuracy",
                                      std::span<const report::Series>(&acc, 1), marker));
  }
  json j;
  j["command"] = "sweep";
  j["points"] = points.size();
  if (marker) j["hindsight_marker"] = *marker;
  return j.dump();
}

// --- analyses --------------------------------------------------------------------

std::string analyze_event_lock(const EventLockOptions& o) {
  require(o.labeled, "--labeled");
  require(o.out, "--out");
  const auto labeled = load_labeled(o.labeled);
  analysis::Signal signal;
  if (o.signal == "confidence") {
    signal = analysis::Signal::confidence;
  } else if (o.signal == "logprob") {
    signal = analysis::Signal::logprob;
  } else {
    throw Error(ErrorCode::InvalidArgument, "unknown signal '" + o.signal + "'");
  }
  std::vector<analysis::SignalSeries> series;
  std::vector<std::size_t> positions;
  for (const auto& lt : labeled) {
    series.push_back(analysis::signal_series(lt.trace, signal));
    positions.push_back(lt.answer.token_index);
  }
  const auto points = analysis::event_locked_average(series, positions, o.pre, o.post);
  write_file(o.out, analysis::event_lock_csv(points));
  if (!o.svg.empty()) {
    report::Series s{o.signal, {}, true};
    const std::size_t w = std::max<std::size_t>(1, o.smooth);
    for (std::size_t k = 0; k < points.size(); ++k) {
      const std::size_t lo = k >= w / 2 ? k - w / 2 : 0;
      const std::size_t hi = std::min(points.size(), lo + w);
      double sum = 0.0;
      for (std::size_t q = lo; q < hi; ++q) sum += points[q].mean;
      s.points.emplace_back(static_cast<double>(points[k].offset), sum / static_cast<double>(hi - lo));
    }
    write_svg(o.svg, report::svg_plot("Event-locked average", "offset from answer arrival", o.signal,
                                      std::span<const report::Series>(&s, 1), 0.0));
  }
  json j;
  j["command"] = "analyze event-lock";
  j["traces"] = labeled.size();
  j["offsets"] = points.size();
  return j.dump();
}

namespace {

std::vector<analysis::ShiftPoint> shift_points(const std::vector<LabeledTrace>& labeled, const std::string& needle) {
  std::vector<analysis::ShiftPoint> out;
  for (const auto& lt : labeled) out.push_back(analysis::token_shift_rates(lt.trace, lt.answer.token_index, needle));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.trace_id < b.trace_id; });
  return out;
}

}  // namespace

std::string analyze_token_shift(const TokenShiftOptions& o) {
  require(o.labeled, "--labeled");
  require(o.out, "--out");
  const auto points = shift_points(load_labeled(o.labeled), o.needle);
  const auto summary = analysis::shift_summary(points);
  write_file(o.out, analysis::shift_csv(points));
  if (!o.svg.empty()) {
    report::Series s{o.needle, {}, false};
    for (const auto& p : points) s.points.emplace_back(p.rate_before, p.rate_after);
    write_svg(o.svg, report::svg_plot("Token usage before vs after answer", "rate before", "rate after",
                                      std::span<const report::Series>(&s, 1)));
  }
  json j;
  j["command"] = "analyze token-shift";
  j["n"] = summary.n;
  j["above_diagonal_pct"] = summary.above_diagonal_pct;
  j["at_origin_pct"] = summary.at_origin_pct;
  return j.dump();
}

std::string analyze_rate_length(const RateLengthOptions& o) {
  require(o.labeled, "--labeled");
  require(o.out, "--out");
  const auto points = shift_points(load_labeled(o.labeled), o.needle);
  const auto bins = analysis::rate_vs_length(points, o.bins);
  write_file(o.out, analysis::rate_length_csv(bins));
  if (!o.svg.empty()) {
    std::vector<report::Series> s{{"before", {}, true}, {"after", {}, true}};
    for (const auto& b : bins) {
      const double mid = 0.5 * (b.edge_lo + b.edge_hi);
      s[0].points.emplace_back(mid, b.mean_before);
      s[1].points.emplace_back(mid, b.mean_after);
    }
    write_svg(o.svg, report::svg_plot("Rate vs CoT length", "CoT length", "rate", s));
  }
  json j;
  j["command"] = "analyze rate-length";
  j["bins"] = bins.size();
  return j.dump();
}

// --- report / pareto -----------------------------------------------------------------

std::string report(const ReportOptions& o) {
  require(o.out, "--out");
  if (o.results.empty()) throw Error(ErrorCode::InvalidArgument, "missing required --results");
  std::vector<report::ResultRow> all;
  for (const auto& spec : o.results) {
    const auto eq = spec.find('=');
    const fs::path path = spec.substr(0, eq);
    const std::string ds = eq == std::string::npos ? path.stem().string() : spec.substr(eq + 1);
    auto rows = report::read_results(path, ds);
    all.insert(all.end(), rows.begin(), rows.end());
  }
  const auto table = report::report(all);
  write_file(o.out, report::table_csv(table));
  if (!o.svg.empty()) {
    std::vector<report::Series> s;
    for (const auto& r : table) s.push_back({r.policy + " / " + r.dataset, {{r.mean_cr_pct, r.accuracy_pct}}, false});
    write_svg(o.svg, report::svg_plot("Accuracy vs compression", "mean CR (%)", "accuracy (%)", s));
  }
  json j;
  j["command"] = "report";
  json rows = json::array();
  for (const auto& r : table) {
    rows.push_back({{"policy", r.policy},
                    {"dataset", r.dataset},
                    {"accuracy_pct", r.accuracy_pct},
                    {"mean_tokens", r.mean_tokens},
                    {"mean_cr_pct", r.mean_cr_pct},
                    {"n", r.n}});
  }
  j["rows"] = rows;
  return j.dump();
}

std::string pareto(const ParetoOptions& o) {
  require(o.table, "--table");
  require(o.out, "--out");
  auto rows = report::read_table(o.table);
  if (!o.dataset.empty()) {
    std::erase_if(rows, [&](const report::BenchmarkRow& r) { return r.dataset != o.dataset; });
  }
  if (rows.empty()) throw Error(ErrorCode::EmptyResults, "no rows to compare");
  const auto front = report::pareto(rows);
  write_file(o.out, report::table_csv(front));
  if (!o.svg.empty()) {
    report::Series all{"all", {}, false};
    for (const auto& r : rows) all.points.emplace_back(r.mean_cr_pct, r.accuracy_pct);
    auto sorted = front;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.mean_cr_pct < b.mean_cr_pct; });
    report::Series fr{"frontier", {}, true};
    for (const auto& r : sorted) fr.points.emplace_back(r.mean_cr_pct, r.accuracy_pct);
    const std::vector<report::Series> s{all, fr};
    write_svg(o.svg, report::svg_plot("Pareto frontier", "mean CR (%)", "accuracy (%)", s));
  }
  json j;
  j["command"] = "pareto";
  j["rows"] = rows.size();
  j["frontier"] = front.size();
  return j.dump();
}

}  // namespace optexit::app
