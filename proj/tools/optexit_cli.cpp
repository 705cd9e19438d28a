// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <csignal>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include <pthread.h>

#include "CLI11.hpp"
#include "optexit/optexit.h"

namespace {

struct Globals {
  std::string endpoint;
  std::string pipeline_endpoint;
  std::string model = "default";
  long timeout_ms = 120000;
  int request_retries = 3;
  std::uint64_t seed = 7;
  std::size_t max_inflight = 8;
  std::string out;
};

const char* c_str_or_null(const std::string& s) { return s.empty() ? nullptr : s.c_str(); }

optexit_endpoint make_endpoint(const Globals& g, const std::string& url) {
  optexit_endpoint e;
  optexit_endpoint_init(&e);
  e.url = c_str_or_null(url);
  e.model = g.model.c_str();
  e.timeout_ms = g.timeout_ms;
  e.max_retries = g.request_retries;
  e.max_inflight = g.max_inflight;
  return e;
}

int finish(optexit_status status, char* summary) {
  if (status != OPTEXIT_OK) {
    std::cerr << "optexit: " << optexit_last_error() << "\n";
    return static_cast<int>(status);
  }
  if (summary) {
    std::cout << summary << "\n";
    optexit_string_free(summary);
  }
  return 0;
}

struct ExitFlags {
  std::size_t window = 10;
  std::size_t majority = 6;
  double tau = -1.0;
  std::size_t max_cot_tokens = 32768;
  bool allow_partial = false;

  void add(CLI::App* cmd) {
    cmd->add_option("--window", window, "Sliding window length")->check(CLI::PositiveNumber);
    cmd->add_option("--majority", majority, "Positive votes needed inside the window")->check(CLI::PositiveNumber);
    cmd->add_option("--tau", tau, "Probability threshold (default: the probe's)");
    cmd->add_option("--max-cot-tokens", max_cot_tokens, "Reasoning budget")->check(CLI::PositiveNumber);
    cmd->add_flag("--allow-partial", allow_partial, "Allow exits before the window fills");
  }

  optexit_exit_config config() const {
    optexit_exit_config c;
    optexit_exit_config_init(&c);
    c.window = window;
    c.majority_min = majority;
    c.prob_threshold = tau;
    c.max_cot_tokens = max_cot_tokens;
    c.allow_partial = allow_partial ? 1 : 0;
    return c;
  }
};

int serve(const std::string& script, const std::string& host, int port) {
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  optexit_mock_server* server = nullptr;
  if (const auto st = optexit_mock_server_start(script.c_str(), host.c_str(), port, &server); st != OPTEXIT_OK) {
    return finish(st, nullptr);
  }
  std::cout << "{\"url\":\"http://" << host << ":" << optexit_mock_server_port(server) << "/v1\"}" << std::endl;
  int received = 0;
  sigwait(&signals, &received);
  std::cerr << "optexit: served " << optexit_mock_server_requests(server) << " requests\n";
  optexit_mock_server_stop(server);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Early-exit toolkit for chain-of-thought reasoning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", optexit_version());

  Globals g;
  app.add_option("--endpoint", g.endpoint, "Reasoning model endpoint (http(s)://... or mock:<script>)");
  app.add_option("--pipeline-endpoint", g.pipeline_endpoint, "Curation and answer-extraction endpoint");
  app.add_option("--model", g.model, "Model name sent to the endpoint");
  app.add_option("--timeout-ms", g.timeout_ms, "Per-request timeout")->check(CLI::PositiveNumber);
  app.add_option("--request-retries", g.request_retries, "Transport retries per request")->check(CLI::NonNegativeNumber);
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--max-inflight", g.max_inflight, "Concurrent request limit")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "Output path");

  std::function<int()> action;

  // curate
  auto* curate = app.add_subcommand("curate", "Label traces with answer positions");
  curate->fallthrough();
  std::string curate_in, curate_report, curate_prompts;
  std::size_t curate_retries = 4;
  double curate_fuzzy = 0.9;
  curate->add_option("--in", curate_in, "Trace file")->required();
  curate->add_option("--report", curate_report, "Per-trace report CSV");
  curate->add_option("--prompts", curate_prompts, "Prompt template file");
  curate->add_option("--max-retries", curate_retries, "Identify/verify attempts per trace")->check(CLI::PositiveNumber);
  curate->add_option("--min-fuzzy", curate_fuzzy, "Minimum fuzzy match score");
  curate->callback([&] {
    action = [&] {
      optexit_curate_options o;
      optexit_curate_options_init(&o);
      o.in = curate_in.c_str();
      o.out = c_str_or_null(g.out);
      o.report = c_str_or_null(curate_report);
      o.prompts = c_str_or_null(curate_prompts);
      o.pipeline = make_endpoint(g, g.pipeline_endpoint);
      o.max_retries = curate_retries;
      o.min_fuzzy = curate_fuzzy;
      char* summary = nullptr;
      const optexit_status st = optexit_curate(&o, &summary);
      return finish(st, summary);
    };
  });

  // train-probe
  auto* train = app.add_subcommand("train-probe", "Train the early-exit probe");
  train->fallthrough();
  std::string train_data, train_features = "logprob", train_sidecars, train_report, train_arch = "linear";
  std::vector<std::size_t> train_hidden;
  double train_lr = 0.01, train_val = 0.2, train_tau = 0.7;
  std::size_t train_epochs = 200, train_batch = 256, train_patience = 20;
  train->add_option("--data", train_data, "Labeled file or directory")->required();
  train->add_option("--features", train_features, "sidecar or logprob");
  train->add_option("--sidecar-dir", train_sidecars, "Directory holding <trace_id>.optx files");
  train->add_option("--report", train_report, "Per-epoch CSV");
  train->add_option("--arch", train_arch, "linear or mlp");
  train->add_option("--hidden", train_hidden, "Hidden widths for mlp")->delimiter(',');
  train->add_option("--lr", train_lr, "Learning rate");
  train->add_option("--epochs", train_epochs, "Maximum epochs");
  train->add_option("--batch", train_batch, "Mini-batch size");
  train->add_option("--patience", train_patience, "Early-stopping patience");
  train->add_option("--val-fraction", train_val, "Validation share of traces");
  train->add_option("--tau", train_tau, "Decision threshold stored in the model");
  train->callback([&] {
    action = [&] {
      optexit_train_options o;
      optexit_train_options_init(&o);
      o.data = train_data.c_str();
      o.features = train_features.c_str();
      o.sidecar_dir = c_str_or_null(train_sidecars);
      o.out = c_str_or_null(g.out);
      o.report = c_str_or_null(train_report);
      o.arch = train_arch.c_str();
      o.hidden = train_hidden.data();
      o.n_hidden = train_hidden.size();
      o.lr = train_lr;
      o.epochs = train_epochs;
      o.batch = train_batch;
      o.patience = train_patience;
      o.val_fraction = train_val;
      o.tau = train_tau;
      o.seed = g.seed;
      char* summary = nullptr;
      const optexit_status st = optexit_train_probe(&o, &summary);
      return finish(st, summary);
    };
  });

  // run
  auto* run = app.add_subcommand("run", "Generate with live early exit");
  run->fallthrough();
  std::string run_prompts, run_probe, run_features = "logprob", run_truth, run_dataset;
  int run_top = 20, run_solution_tokens = 1024;
  ExitFlags run_exit;
  run->add_option("--prompts", run_prompts, "Prompt, trace or labeled file")->required();
  run->add_option("--probe", run_probe, "Probe model file")->required();
  run->add_option("--features", run_features, "logprob");
  run->add_option("--ground-truth", run_truth, "CSV trace_id,answer");
  run->add_option("--dataset", run_dataset, "Dataset name for the results");
  run->add_option("--top-logprobs", run_top, "Top-K logprobs requested");
  run->add_option("--solution-max-tokens", run_solution_tokens, "Budget for the final solution");
  run_exit.add(run);
  run->callback([&] {
    action = [&] {
      optexit_run_options o;
      optexit_run_options_init(&o);
      o.prompts = run_prompts.c_str();
      o.probe = run_probe.c_str();
      o.features = run_features.c_str();
      o.exit = run_exit.config();
      o.endpoint = make_endpoint(g, g.endpoint);
      o.pipeline = make_endpoint(g, g.pipeline_endpoint);
      o.ground_truth = c_str_or_null(run_truth);
      o.dataset = c_str_or_null(run_dataset);
      o.out = c_str_or_null(g.out);
      o.top_logprobs = run_top;
      o.solution_max_tokens = run_solution_tokens;
      char* summary = nullptr;
      const optexit_status st = optexit_run(&o, &summary);
      return finish(st, summary);
    };
  });

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Replay stored traces under exit policies");
  eval->fallthrough();
  std::string eval_dataset, eval_policy = "optexit", eval_probe, eval_features = "logprob", eval_sidecars, eval_truth,
                            eval_name;
  std::size_t deer_chunk = 64, dynasor_interval = 64, dynasor_w = 8;
  double deer_threshold = 0.95;
  int eval_solution_tokens = 1024;
  ExitFlags eval_exit;
  eval->add_option("--dataset", eval_dataset, "Trace or labeled file")->required();
  eval->add_option("--policy", eval_policy, "Comma list of vanilla,nothinking,deer,dynasor,optexit");
  eval->add_option("--probe", eval_probe, "Probe model file");
  eval->add_option("--features", eval_features, "sidecar or logprob");
  eval->add_option("--sidecar-dir", eval_sidecars, "Directory holding <trace_id>.optx files");
  eval->add_option("--ground-truth", eval_truth, "CSV trace_id,answer");
  eval->add_option("--dataset-name", eval_name, "Dataset name for the results");
  eval->add_option("--deer-chunk", deer_chunk, "Tokens per confidence chunk");
  eval->add_option("--deer-threshold", deer_threshold, "Chunk confidence needed to exit");
  eval->add_option("--dynasor-interval", dynasor_interval, "Tokens between probes");
  eval->add_option("--dynasor-w", dynasor_w, "Consistent answers needed to exit");
  eval->add_option("--solution-max-tokens", eval_solution_tokens, "Budget for the final solution");
  eval_exit.add(eval);
  eval->callback([&] {
    action = [&] {
      optexit_evaluate_options o;
      optexit_evaluate_options_init(&o);
      o.dataset_path = eval_dataset.c_str();
      o.policy = eval_policy.c_str();
      o.probe = c_str_or_null(eval_probe);
      o.features = eval_features.c_str();
      o.sidecar_dir = c_str_or_null(eval_sidecars);
      o.exit = eval_exit.config();
      o.deer_chunk = deer_chunk;
      o.deer_threshold = deer_threshold;
      o.dynasor_interval = dynasor_interval;
      o.dynasor_w = dynasor_w;
      o.endpoint = make_endpoint(g, g.endpoint);
      o.pipeline = make_endpoint(g, g.pipeline_endpoint);
      o.ground_truth = c_str_or_null(eval_truth);
      o.dataset = c_str_or_null(eval_name);
      o.out = c_str_or_null(g.out);
      o.solution_max_tokens = eval_solution_tokens;
      char* summary = nullptr;
      const optexit_status st = optexit_evaluate(&o, &summary);
      return finish(st, summary);
    };
  });

  // horl
  auto* horl = app.add_subcommand("horl", "Hindsight-optimal reasoning length per trace");
  horl->fallthrough();
  std::string horl_traces, horl_strategy = "exact";
  std::size_t horl_grid = 21;
  horl->add_option("--traces", horl_traces, "Trace file")->required();
  horl->add_option("--strategy", horl_strategy, "exact or grid")->check(CLI::IsMember({"exact", "exact_scan", "grid"}));
  horl->add_option("--grid-points", horl_grid, "Grid size for the grid strategy");
  horl->callback([&] {
    action = [&] {
      optexit_horl_options o;
      optexit_horl_options_init(&o);
      o.traces = horl_traces.c_str();
      o.strategy = horl_strategy.c_str();
      o.grid_points = horl_grid;
      o.endpoint = make_endpoint(g, g.endpoint);
      o.pipeline = make_endpoint(g, g.pipeline_endpoint);
      o.out = c_str_or_null(g.out);
      char* summary = nullptr;
      const optexit_status st = optexit_horl(&o, &summary);
      return finish(st, summary);
    };
  });

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Accuracy under fixed truncation fractions");
  sweep->fallthrough();
  std::string sweep_traces, sweep_fractions = "0.05:1.0:0.05", sweep_truth, sweep_labeled, sweep_svg;
  sweep->add_option("--traces", sweep_traces, "Trace file")->required();
  sweep->add_option("--fractions", sweep_fractions, "lo:hi:step or comma list");
  sweep->add_option("--ground-truth", sweep_truth, "CSV trace_id,answer");
  sweep->add_option("--labeled", sweep_labeled, "Labeled file for the hindsight marker");
  sweep->add_option("--svg", sweep_svg, "Plot path");
  sweep->callback([&] {
    action = [&] {
      optexit_sweep_options o;
      optexit_sweep_options_init(&o);
      o.traces = sweep_traces.c_str();
      o.fractions = sweep_fractions.c_str();
      o.ground_truth = c_str_or_null(sweep_truth);
      o.labeled = c_str_or_null(sweep_labeled);
      o.endpoint = make_endpoint(g, g.endpoint);
      o.pipeline = make_endpoint(g, g.pipeline_endpoint);
      o.out = c_str_or_null(g.out);
      o.svg = c_str_or_null(sweep_svg);
      char* summary = nullptr;
      const optexit_status st = optexit_sweep(&o, &summary);
      return finish(st, summary);
    };
  });

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Signal studies on labeled traces");
  analyze->fallthrough();
  analyze->require_subcommand(1);

  auto* lock = analyze->add_subcommand("event-lock", "Signal averaged around the answer position");
  lock->fallthrough();
  std::string lock_labeled, lock_signal = "confidence", lock_svg;
  std::size_t lock_pre = 50, lock_post = 50, lock_smooth = 1;
  lock->add_option("--labeled", lock_labeled, "Labeled file")->required();
  lock->add_option("--signal", lock_signal, "confidence or logprob")->check(CLI::IsMember({"confidence", "logprob"}));
  lock->add_option("--pre", lock_pre, "Tokens before the event");
  lock->add_option("--post", lock_post, "Tokens after the event");
  lock->add_option("--smooth", lock_smooth, "Moving-average width for the plot");
  lock->add_option("--svg", lock_svg, "Plot path");
  lock->callback([&] {
    action = [&] {
      optexit_event_lock_options o;
      optexit_event_lock_options_init(&o);
      o.labeled = lock_labeled.c_str();
      o.signal = lock_signal.c_str();
      o.pre = lock_pre;
      o.post = lock_post;
      o.smooth = lock_smooth;
      o.out = c_str_or_null(g.out);
      o.svg = c_str_or_null(lock_svg);
      char* summary = nullptr;
      const optexit_status st = optexit_analyze_event_lock(&o, &summary);
      return finish(st, summary);
    };
  });

  auto* shift = analyze->add_subcommand("token-shift", "Token rates before and after the answer");
  shift->fallthrough();
  std::string shift_labeled, shift_needle = "wait", shift_svg;
  shift->add_option("--labeled", shift_labeled, "Labeled file")->required();
  shift->add_option("--token", shift_needle, "Token to count");
  shift->add_option("--svg", shift_svg, "Plot path");
  shift->callback([&] {
    action = [&] {
      optexit_token_shift_options o;
      optexit_token_shift_options_init(&o);
      o.labeled = shift_labeled.c_str();
      o.needle = shift_needle.c_str();
      o.out = c_str_or_null(g.out);
      o.svg = c_str_or_null(shift_svg);
      char* summary = nullptr;
      const optexit_status st = optexit_analyze_token_shift(&o, &summary);
      return finish(st, summary);
    };
  });

  auto* rate = analyze->add_subcommand("rate-length", "Token rate against reasoning length");
  rate->fallthrough();
  std::string rate_labeled, rate_needle = "wait", rate_svg;
  std::size_t rate_bins = 10;
  rate->add_option("--labeled", rate_labeled, "Labeled file")->required();
  rate->add_option("--token", rate_needle, "Token to count");
  rate->add_option("--bins", rate_bins, "Length bins")->check(CLI::PositiveNumber);
  rate->add_option("--svg", rate_svg, "Plot path");
  rate->callback([&] {
    action = [&] {
      optexit_rate_length_options o;
      optexit_rate_length_options_init(&o);
      o.labeled = rate_labeled.c_str();
      o.needle = rate_needle.c_str();
      o.bins = rate_bins;
      o.out = c_str_or_null(g.out);
      o.svg = c_str_or_null(rate_svg);
      char* summary = nullptr;
      const optexit_status st = optexit_analyze_rate_length(&o, &summary);
      return finish(st, summary);
    };
  });

  // report
  auto* report = app.add_subcommand("report", "Per-policy accuracy and compression");
  report->fallthrough();
  std::vector<std::string> report_results;
  std::string report_svg;
  report->add_option("--results", report_results, "Results CSVs, each path or path=dataset")->required();
  report->add_option("--svg", report_svg, "Scatter plot path");
  report->callback([&] {
    action = [&] {
      std::vector<const char*> paths;
      for (const auto& r : report_results) paths.push_back(r.c_str());
      optexit_report_options o;
      optexit_report_options_init(&o);
      o.results = paths.data();
      o.n_results = paths.size();
      o.out = c_str_or_null(g.out);
      o.svg = c_str_or_null(report_svg);
      char* summary = nullptr;
      const optexit_status st = optexit_report(&o, &summary);
      return finish(st, summary);
    };
  });

  // pareto
  auto* pareto = app.add_subcommand("pareto", "Non-dominated policies of one dataset");
  pareto->fallthrough();
  std::string pareto_table, pareto_dataset, pareto_svg;
  pareto->add_option("--table", pareto_table, "Table CSV from report")->required();
  pareto->add_option("--dataset", pareto_dataset, "Dataset to keep");
  pareto->add_option("--svg", pareto_svg, "Plot path");
  pareto->callback([&] {
    action = [&] {
      optexit_pareto_options o;
      optexit_pareto_options_init(&o);
      o.table = pareto_table.c_str();
      o.dataset = c_str_or_null(pareto_dataset);
      o.out = c_str_or_null(g.out);
      o.svg = c_str_or_null(pareto_svg);
      char* summary = nullptr;
      const optexit_status st = optexit_pareto(&o, &summary);
      return finish(st, summary);
    };
  });

  // mock-serve
  auto* mock = app.add_subcommand("mock-serve", "Serve a scripted OpenAI-compatible endpoint");
  mock->fallthrough();
  std::string mock_script, mock_host = "127.0.0.1";
  int mock_port = 0;
  mock->add_option("--script", mock_script, "Mock script JSONL")->required();
  mock->add_option("--host", mock_host, "Bind address");
  mock->add_option("--port", mock_port, "Port, 0 for any free port");
  mock->callback([&] { action = [&] { return serve(mock_script, mock_host, mock_port); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  return action ? action() : 1;
}
