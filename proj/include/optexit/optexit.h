/* Copyright 2026 The OptExit Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to liboptexit. Every fallible call returns an optexit_status;
 * on failure optexit_last_error() describes the problem for the calling
 * thread. Strings returned through char** out-parameters are owned by the
 * caller and released with optexit_string_free().
 */
#ifndef OPTEXIT_OPTEXIT_H
#define OPTEXIT_OPTEXIT_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(OPTEXIT_BUILDING_LIBRARY)
#define OPTEXIT_API __attribute__((visibility("default")))
#else
#define OPTEXIT_API
#endif

/* Values match the CLI exit codes. */
typedef enum optexit_status {
  OPTEXIT_OK = 0,
  OPTEXIT_E_USAGE = 1,
  OPTEXIT_E_DATA = 2,
  OPTEXIT_E_TRANSPORT = 3,
  OPTEXIT_E_INTERNAL = 4
} optexit_status;

OPTEXIT_API const char* optexit_version(void);
/* Message of the last failure on this thread; "" when none. */
OPTEXIT_API const char* optexit_last_error(void);
/* Symbolic error name of the last failure on this thread, e.g. "RowCountMismatch". */
OPTEXIT_API const char* optexit_last_error_code(void);
OPTEXIT_API void optexit_string_free(char* s);

/* ---- probe model ---------------------------------------------------- */

typedef struct optexit_probe optexit_probe;

OPTEXIT_API optexit_status optexit_probe_load(const char* path, optexit_probe** out);
OPTEXIT_API optexit_status optexit_probe_save(const optexit_probe* probe, const char* path);
OPTEXIT_API optexit_status optexit_probe_predict(const optexit_probe* probe, const double* x, size_t dim,
                                                 double* p_out);
OPTEXIT_API size_t optexit_probe_dim(const optexit_probe* probe);
OPTEXIT_API double optexit_probe_threshold(const optexit_probe* probe);
OPTEXIT_API void optexit_probe_free(optexit_probe* probe);

/* ---- exit session --------------------------------------------------- */

typedef struct optexit_exit_config {
  size_t window;
  size_t majority_min;
  double prob_threshold; /* negative: take the probe's threshold where one applies */
  size_t max_cot_tokens;
  int allow_partial; /* non-zero: exit may fire before the window fills */
} optexit_exit_config;

OPTEXIT_API void optexit_exit_config_init(optexit_exit_config* cfg);

typedef struct optexit_session optexit_session;

OPTEXIT_API optexit_status optexit_session_create(const optexit_exit_config* cfg, optexit_session** out);
OPTEXIT_API void optexit_session_set_think(optexit_session* s, int inside);
/* *exited is set to 1 when this step fired the exit. */
OPTEXIT_API optexit_status optexit_session_step(optexit_session* s, double p, int* exited);
OPTEXIT_API size_t optexit_session_tokens_seen(const optexit_session* s);
/* M_early, or 0 while the session has not exited. */
OPTEXIT_API size_t optexit_session_exited_at(const optexit_session* s);
OPTEXIT_API void optexit_session_free(optexit_session* s);

/* ---- mock server ---------------------------------------------------- */

typedef struct optexit_mock_server optexit_mock_server;

/* port 0 picks a free port. */
OPTEXIT_API optexit_status optexit_mock_server_start(const char* script_path, const char* host, int port,
                                                     optexit_mock_server** out);
OPTEXIT_API int optexit_mock_server_port(const optexit_mock_server* server);
OPTEXIT_API size_t optexit_mock_server_requests(const optexit_mock_server* server);
/* Stops serving and releases the handle. */
OPTEXIT_API void optexit_mock_server_stop(optexit_mock_server* server);

/* ---- pipeline commands ---------------------------------------------- */

typedef struct optexit_endpoint {
  const char* url; /* http(s)://host[:port][/v1] or mock:<script.jsonl>; NULL = none */
  const char* model;
  long timeout_ms;
  int max_retries;
  size_t max_inflight;
} optexit_endpoint;

OPTEXIT_API void optexit_endpoint_init(optexit_endpoint* e);

typedef struct optexit_curate_options {
  const char* in;
  const char* out;
  const char* report;
  const char* prompts;
  optexit_endpoint pipeline;
  size_t max_retries;
  double min_fuzzy;
} optexit_curate_options;

OPTEXIT_API void optexit_curate_options_init(optexit_curate_options* o);
OPTEXIT_API optexit_status optexit_curate(const optexit_curate_options* o, char** summary_json);

typedef struct optexit_train_options {
  const char* data;
  const char* features; /* "logprob" or "sidecar" */
  const char* sidecar_dir;
  const char* out;
  const char* report;
  const char* arch; /* "linear" or "mlp" */
  const size_t* hidden;
  size_t n_hidden;
  double lr;
  size_t epochs;
  size_t batch;
  size_t patience;
  double val_fraction;
  double tau;
  uint64_t seed;
} optexit_train_options;

OPTEXIT_API void optexit_train_options_init(optexit_train_options* o);
OPTEXIT_API optexit_status optexit_train_probe(const optexit_train_options* o, char** summary_json);

typedef struct optexit_run_options {
  const char* prompts;
  const char* probe;
  const char* features;
  optexit_exit_config exit;
  optexit_endpoint endpoint;
  optexit_endpoint pipeline;
  const char* ground_truth;
  const char* dataset;
  const char* out;
  int top_logprobs;
  int solution_max_tokens;
} optexit_run_options;

OPTEXIT_API void optexit_run_options_init(optexit_run_options* o);
OPTEXIT_API optexit_status optexit_run(const optexit_run_options* o, char** summary_json);

typedef struct optexit_evaluate_options {
  const char* dataset_path;
  const char* policy; /* comma list of vanilla,nothinking,deer,dynasor,optexit */
  const char* probe;
  const char* features;
  const char* sidecar_dir;
  optexit_exit_config exit;
  size_t deer_chunk;
  double deer_threshold;
  size_t dynasor_interval;
  size_t dynasor_w;
  optexit_endpoint endpoint;
  optexit_endpoint pipeline;
  const char* ground_truth;
  const char* dataset;
  const char* out;
  int solution_max_tokens;
} optexit_evaluate_options;

OPTEXIT_API void optexit_evaluate_options_init(optexit_evaluate_options* o);
OPTEXIT_API optexit_status optexit_evaluate(const optexit_evaluate_options* o, char** summary_json);

typedef struct optexit_horl_options {
  const char* traces;
  const char* strategy; /* "exact" or "grid" */
  size_t grid_points;
  optexit_endpoint endpoint;
  optexit_endpoint pipeline;
  const char* out;
} optexit_horl_options;

OPTEXIT_API void optexit_horl_options_init(optexit_horl_options* o);
OPTEXIT_API optexit_status optexit_horl(const optexit_horl_options* o, char** summary_json);

typedef struct optexit_sweep_options {
  const char* traces;
  const char* fractions; /* "lo:hi:step" or comma list */
  const char* ground_truth;
  const char* labeled;
  optexit_endpoint endpoint;
  optexit_endpoint pipeline;
  const char* out;
  const char* svg;
} optexit_sweep_options;

OPTEXIT_API void optexit_sweep_options_init(optexit_sweep_options* o);
OPTEXIT_API optexit_status optexit_sweep(const optexit_sweep_options* o, char** summary_json);

typedef struct optexit_event_lock_options {
  const char* labeled;
  const char* signal; /* "confidence" or "logprob" */
  size_t pre;
  size_t post;
  size_t smooth;
  const char* out;
  const char* svg;
} optexit_event_lock_options;

OPTEXIT_API void optexit_event_lock_options_init(optexit_event_lock_options* o);
OPTEXIT_API optexit_status optexit_analyze_event_lock(const optexit_event_lock_options* o, char** summary_json);

typedef struct optexit_token_shift_options {
  const char* labeled;
  const char* needle;
  const char* out;
  const char* svg;
} optexit_token_shift_options;

OPTEXIT_API void optexit_token_shift_options_init(optexit_token_shift_options* o);
OPTEXIT_API optexit_status optexit_analyze_token_shift(const optexit_token_shift_options* o, char** summary_json);

typedef struct optexit_rate_length_options {
  const char* labeled;
  const char* needle;
  size_t bins;
  const char* out;
  const char* svg;
} optexit_rate_length_options;

OPTEXIT_API void optexit_rate_length_options_init(optexit_rate_length_options* o);
OPTEXIT_API optexit_status optexit_analyze_rate_length(const optexit_rate_length_options* o, char** summary_json);

typedef struct optexit_report_options {
  const char* const* results; /* "path" or "path=dataset" */
  size_t n_results;
  const char* out;
  const char* svg;
} optexit_report_options;

OPTEXIT_API void optexit_report_options_init(optexit_report_options* o);
OPTEXIT_API optexit_status optexit_report(const optexit_report_options* o, char** summary_json);

typedef struct optexit_pareto_options {
  const char* table;
  const char* dataset;
  const char* out;
  const char* svg;
} optexit_pareto_options;

OPTEXIT_API void optexit_pareto_options_init(optexit_pareto_options* o);
OPTEXIT_API optexit_status optexit_pareto(const optexit_pareto_options* o, char** summary_json);

#ifdef __cplusplus
}
#endif

#endif /* OPTEXIT_OPTEXIT_H */
