// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include "optexit/optexit.h"

#include <cstdlib>
#include <cstring>
#include <exception>
#include <memory>
#include <new>
#include <string>

#include "optexit/app/commands.hpp"
#include "optexit/common/error.hpp"
#include "optexit/exit/controller.hpp"
#include "optexit/llm/mock.hpp"
#include "optexit/probe/probe.hpp"

struct optexit_probe {
  optexit::probe::ProbeModel model;
};

struct optexit_session {
  explicit optexit_session(const optexit::controller::ExitConfig& c) : session(c) {}
  optexit::controller::ExitSession session;
};

struct optexit_mock_server {
  std::unique_ptr<optexit::llm::MockServer> server;
};

namespace {

using optexit::Error;
using optexit::ErrorCategory;
using optexit::ErrorCode;

thread_local std::string t_message;
thread_local std::string t_code;

optexit_status status_of(ErrorCategory c) {
  switch (c) {
    case ErrorCategory::usage: return OPTEXIT_E_USAGE;
    case ErrorCategory::data: return OPTEXIT_E_DATA;
    case ErrorCategory::transport: return OPTEXIT_E_TRANSPORT;
    case ErrorCategory::internal: return OPTEXIT_E_INTERNAL;
  }
  return OPTEXIT_E_INTERNAL;
}

template <typename F>
optexit_status guarded(F&& f) noexcept {
  t_message.clear();
  t_code.clear();
  try {
    f();
    return OPTEXIT_OK;
  } catch (const Error& e) {
    t_message = e.what();
    t_code = optexit::to_string(e.code());
    return status_of(e.category());
  } catch (const std::bad_alloc&) {
    t_message = "out of memory";
    t_code = "OutOfMemory";
  } catch (const std::exception& e) {
    t_message = e.what();
    t_code = "Internal";
  } catch (...) {
    t_message = "unknown failure";
    t_code = "Internal";
  }
  return OPTEXIT_E_INTERNAL;
}

void need(const void* p, const char* what) {
  if (!p) throw Error(ErrorCode::InvalidArgument, std::string(what) + " must not be NULL");
}

std::string str(const char* s) { return s ? std::string(s) : std::string(); }

char* dup(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void emit(const std::string& summary, char** out) {
  if (out) *out = dup(summary);
}

optexit::app::Endpoint endpoint(const optexit_endpoint& e) {
  optexit::app::Endpoint out;
  out.url = str(e.url);
  if (e.model) out.model = e.model;
  out.timeout_ms = e.timeout_ms;
  out.max_retries = e.max_retries;
  out.max_inflight = e.max_inflight;
  return out;
}

optexit::controller::ExitConfig exit_config(const optexit_exit_config& c) {
  optexit::controller::ExitConfig out;
  out.window = c.window;
  out.majority_min = c.majority_min;
  if (c.prob_threshold >= 0.0) out.prob_threshold = c.prob_threshold;
  out.max_cot_tokens = c.max_cot_tokens;
  out.warmup = c.allow_partial ? optexit::controller::Warmup::allow_partial
                               : optexit::controller::Warmup::require_full_window;
  return out;
}

optexit::app::ExitOptions exit_options(const optexit_exit_config& c) {
  optexit::app::ExitOptions out;
  out.window = c.window;
  out.majority = c.majority_min;
  out.tau = c.prob_threshold;
  out.max_cot_tokens = c.max_cot_tokens;
  out.allow_partial = c.allow_partial != 0;
  return out;
}

}  // namespace

extern "C" {

const char* optexit_version(void) { return "0.1.0"; }
const char* optexit_last_error(void) { return t_message.c_str(); }
const char* optexit_last_error_code(void) { return t_code.c_str(); }
void optexit_string_free(char* s) { std::free(s); }

// ---- probe ------------------------------------------------------------------

optexit_status optexit_probe_load(const char* path, optexit_probe** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new optexit_probe{optexit::probe::load_model(path)};
  });
}

optexit_status optexit_probe_save(const optexit_probe* probe, const char* path) {
  return guarded([&] {
    need(probe, "probe");
    need(path, "path");
    optexit::probe::save_model(path, probe->model);
  });
}

optexit_status optexit_probe_predict(const optexit_probe* probe, const double* x, size_t dim, double* p_out) {
  return guarded([&] {
    need(probe, "probe");
    need(x, "x");
    need(p_out, "p_out");
    *p_out = probe->model.predict(std::span<const double>(x, dim));
  });
}

size_t optexit_probe_dim(const optexit_probe* probe) { return probe ? probe->model.input_dim() : 0; }
double optexit_probe_threshold(const optexit_probe* probe) { return probe ? probe->model.threshold() : 0.0; }
void optexit_probe_free(optexit_probe* probe) { delete probe; }

// ---- session ----------------------------------------------------------------

void optexit_exit_config_init(optexit_exit_config* cfg) {
  if (!cfg) return;
  const optexit::controller::ExitConfig d;
  cfg->window = d.window;
  cfg->majority_min = d.majority_min;
  cfg->prob_threshold = -1.0;
  cfg->max_cot_tokens = d.max_cot_tokens;
  cfg->allow_partial = 0;
}

optexit_status optexit_session_create(const optexit_exit_config* cfg, optexit_session** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = new optexit_session(exit_config(*cfg));
  });
}

void optexit_session_set_think(optexit_session* s, int inside) {
  if (s) s->session.set_in_think_region(inside != 0);
}

optexit_status optexit_session_step(optexit_session* s, double p, int* exited) {
  return guarded([&] {
    need(s, "session");
    const bool fired = s->session.step(p) == optexit::controller::Decision::exit;
    if (exited) *exited = fired ? 1 : 0;
  });
}

size_t optexit_session_tokens_seen(const optexit_session* s) { return s ? s->session.tokens_seen() : 0; }
size_t optexit_session_exited_at(const optexit_session* s) {
  return s ? s->session.exited_at().value_or(0) : 0;
}
void optexit_session_free(optexit_session* s) { delete s; }

// ---- mock server ------------------------------------------------------------

optexit_status optexit_mock_server_start(const char* script_path, const char* host, int port,
                                         optexit_mock_server** out) {
  return guarded([&] {
    need(script_path, "script_path");
    need(out, "out");
    auto script = optexit::llm::MockScript::load(script_path);
    auto handle = std::make_unique<optexit_mock_server>();
    handle->server = std::make_unique<optexit::llm::MockServer>(std::move(script), host ? host : "127.0.0.1", port);
    *out = handle.release();
  });
}

int optexit_mock_server_port(const optexit_mock_server* server) { return server ? server->server->port() : 0; }
size_t optexit_mock_server_requests(const optexit_mock_server* server) {
  return server ? server->server->request_count() : 0;
}
void optexit_mock_server_stop(optexit_mock_server* server) {
  if (!server) return;
  server->server->stop();
  delete server;
}

// ---- commands -----------------------------------------------------------------

void optexit_endpoint_init(optexit_endpoint* e) {
  if (!e) return;
  const optexit::app::Endpoint d;
  e->url = nullptr;
  e->model = nullptr;
  e->timeout_ms = d.timeout_ms;
  e->max_retries = d.max_retries;
  e->max_inflight = d.max_inflight;
}

void optexit_curate_options_init(optexit_curate_options* o) {
  if (!o) return;
  const optexit::app::CurateOptions d;
  *o = optexit_curate_options{};
  optexit_endpoint_init(&o->pipeline);
  o->max_retries = d.max_retries;
  o->min_fuzzy = d.min_fuzzy;
}

optexit_status optexit_curate(const optexit_curate_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::CurateOptions c;
    c.in = str(o->in);
    c.out = str(o->out);
    c.report = str(o->report);
    c.prompts = str(o->prompts);
    c.pipeline = endpoint(o->pipeline);
    c.max_retries = o->max_retries;
    c.min_fuzzy = o->min_fuzzy;
    emit(optexit::app::curate(c), summary_json);
  });
}

void optexit_train_options_init(optexit_train_options* o) {
  if (!o) return;
  const optexit::app::TrainOptions d;
  *o = optexit_train_options{};
  o->features = "logprob";
  o->arch = "linear";
  o->lr = d.lr;
  o->epochs = d.epochs;
  o->batch = d.batch;
  o->patience = d.patience;
  o->val_fraction = d.val_fraction;
  o->tau = d.tau;
  o->seed = d.seed;
}

optexit_status optexit_train_probe(const optexit_train_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::TrainOptions c;
    c.data = str(o->data);
    if (o->features) c.features = o->features;
    c.sidecar_dir = str(o->sidecar_dir);
    c.out = str(o->out);
    c.report = str(o->report);
    if (o->arch) c.arch = o->arch;
    if (o->n_hidden) {
      need(o->hidden, "hidden");
      c.hidden.assign(o->hidden, o->hidden + o->n_hidden);
    }
    c.lr = o->lr;
    c.epochs = o->epochs;
    c.batch = o->batch;
    c.patience = o->patience;
    c.val_fraction = o->val_fraction;
    c.tau = o->tau;
    c.seed = o->seed;
    emit(optexit::app::train_probe(c), summary_json);
  });
}

void optexit_run_options_init(optexit_run_options* o) {
  if (!o) return;
  const optexit::app::RunOptions d;
  *o = optexit_run_options{};
  o->features = "logprob";
  optexit_exit_config_init(&o->exit);
  optexit_endpoint_init(&o->endpoint);
  optexit_endpoint_init(&o->pipeline);
  o->top_logprobs = d.top_logprobs;
  o->solution_max_tokens = d.solution_max_tokens;
}

optexit_status optexit_run(const optexit_run_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::RunOptions c;
    c.prompts = str(o->prompts);
    c.probe = str(o->probe);
    if (o->features) c.features = o->features;
    c.exit = exit_options(o->exit);
    c.endpoint = endpoint(o->endpoint);
    c.pipeline = endpoint(o->pipeline);
    c.ground_truth = str(o->ground_truth);
    c.dataset = str(o->dataset);
    c.out = str(o->out);
    c.top_logprobs = o->top_logprobs;
    c.solution_max_tokens = o->solution_max_tokens;
    emit(optexit::app::run(c), summary_json);
  });
}

void optexit_evaluate_options_init(optexit_evaluate_options* o) {
  if (!o) return;
  const optexit::app::EvaluateOptions d;
  *o = optexit_evaluate_options{};
  o->policy = "optexit";
  o->features = "logprob";
  optexit_exit_config_init(&o->exit);
  o->deer_chunk = d.deer_chunk;
  o->deer_threshold = d.deer_threshold;
  o->dynasor_interval = d.dynasor_interval;
  o->dynasor_w = d.dynasor_w;
  optexit_endpoint_init(&o->endpoint);
  optexit_endpoint_init(&o->pipeline);
  o->solution_max_tokens = d.solution_max_tokens;
}

optexit_status optexit_evaluate(const optexit_evaluate_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::EvaluateOptions c;
    c.dataset_path = str(o->dataset_path);
    if (o->policy) c.policy = o->policy;
    c.probe = str(o->probe);
    if (o->features) c.features = o->features;
    c.sidecar_dir = str(o->sidecar_dir);
    c.exit = exit_options(o->exit);
    c.deer_chunk = o->deer_chunk;
    c.deer_threshold = o->deer_threshold;
    c.dynasor_interval = o->dynasor_interval;
    c.dynasor_w = o->dynasor_w;
    c.endpoint = endpoint(o->endpoint);
    c.pipeline = endpoint(o->pipeline);
    c.ground_truth = str(o->ground_truth);
    c.dataset = str(o->dataset);
    c.out = str(o->out);
    c.solution_max_tokens = o->solution_max_tokens;
    emit(optexit::app::evaluate(c), summary_json);
  });
}

void optexit_horl_options_init(optexit_horl_options* o) {
  if (!o) return;
  *o = optexit_horl_options{};
  o->strategy = "exact";
  o->grid_points = optexit::app::HorlOptions{}.grid_points;
  optexit_endpoint_init(&o->endpoint);
  optexit_endpoint_init(&o->pipeline);
}

optexit_status optexit_horl(const optexit_horl_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::HorlOptions c;
    c.traces = str(o->traces);
    if (o->strategy) c.strategy = o->strategy;
    c.grid_points = o->grid_points;
    c.endpoint = endpoint(o->endpoint);
    c.pipeline = endpoint(o->pipeline);
    c.out = str(o->out);
    emit(optexit::app::horl(c), summary_json);
  });
}

void optexit_sweep_options_init(optexit_sweep_options* o) {
  if (!o) return;
  *o = optexit_sweep_options{};
  o->fractions = "0.05:1.0:0.05";
  optexit_endpoint_init(&o->endpoint);
  optexit_endpoint_init(&o->pipeline);
}

optexit_status optexit_sweep(const optexit_sweep_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::SweepOptions c;
    c.traces = str(o->traces);
    if (o->fractions) c.fractions = o->fractions;
    c.ground_truth = str(o->ground_truth);
    c.labeled = str(o->labeled);
    c.endpoint = endpoint(o->endpoint);
    c.pipeline = endpoint(o->pipeline);
    c.out = str(o->out);
    c.svg = str(o->svg);
    emit(optexit::app::sweep(c), summary_json);
  });
}

void optexit_event_lock_options_init(optexit_event_lock_options* o) {
  if (!o) return;
  const optexit::app::EventLockOptions d;
  *o = optexit_event_lock_options{};
  o->signal = "confidence";
  o->pre = d.pre;
  o->post = d.post;
  o->smooth = d.smooth;
}

optexit_status optexit_analyze_event_lock(const optexit_event_lock_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::EventLockOptions c;
    c.labeled = str(o->labeled);
    if (o->signal) c.signal = o->signal;
    c.pre = o->pre;
    c.post = o->post;
    c.smooth = o->smooth;
    c.out = str(o->out);
    c.svg = str(o->svg);
    emit(optexit::app::analyze_event_lock(c), summary_json);
  });
}

void optexit_token_shift_options_init(optexit_token_shift_options* o) {
  if (!o) return;
  *o = optexit_token_shift_options{};
  o->needle = "wait";
}

optexit_status optexit_analyze_token_shift(const optexit_token_shift_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::TokenShiftOptions c;
    c.labeled = str(o->labeled);
    if (o->needle) c.needle = o->needle;
    c.out = str(o->out);
    c.svg = str(o->svg);
    emit(optexit::app::analyze_token_shift(c), summary_json);
  });
}

void optexit_rate_length_options_init(optexit_rate_length_options* o) {
  if (!o) return;
  *o = optexit_rate_length_options{};
  o->needle = "wait";
  o->bins = optexit::app::RateLengthOptions{}.bins;
}

optexit_status optexit_analyze_rate_length(const optexit_rate_length_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::RateLengthOptions c;
    c.labeled = str(o->labeled);
    if (o->needle) c.needle = o->needle;
    c.bins = o->bins;
    c.out = str(o->out);
    c.svg = str(o->svg);
    emit(optexit::app::analyze_rate_length(c), summary_json);
  });
}

void optexit_report_options_init(optexit_report_options* o) {
  if (o) *o = optexit_report_options{};
}

optexit_status optexit_report(const optexit_report_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::ReportOptions c;
    if (o->n_results) need(o->results, "results");
    for (size_t i = 0; i < o->n_results; ++i) c.results.push_back(str(o->results[i]));
    c.out = str(o->out);
    c.svg = str(o->svg);
    emit(optexit::app::report(c), summary_json);
  });
}

void optexit_pareto_options_init(optexit_pareto_options* o) {
  if (o) *o = optexit_pareto_options{};
}

optexit_status optexit_pareto(const optexit_pareto_options* o, char** summary_json) {
  return guarded([&] {
    need(o, "options");
    optexit::app::ParetoOptions c;
    c.table = str(o->table);
    c.dataset = str(o->dataset);
    c.out = str(o->out);
    c.svg = str(o->svg);
    emit(optexit::app::pareto(c), summary_json);
  });
}

}  // extern "C"
