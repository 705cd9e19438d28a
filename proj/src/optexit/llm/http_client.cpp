// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstdlib>
#include <httplib.h>
#include <random>
#include <thread>

#include "optexit/common/error.hpp"
#include "optexit/llm/client.hpp"
#include "optexit/llm/wire.hpp"

namespace optexit::llm {

const char* to_string(Role role) noexcept {
  switch (role) {
    case Role::generate: return "generate";
    case Role::extract: return "extract";
    case Role::identify: return "identify";
    case Role::verify: return "verify";
    case Role::solve_after_truncation: return "solve_after_truncation";
  }
  return "generate";
}

Role role_from_string(std::string_view s) {
  if (s == "generate") return Role::generate;
  if (s == "extract") return Role::extract;
  if (s == "identify") return Role::identify;
  if (s == "verify") return Role::verify;
  if (s == "solve_after_truncation") return Role::solve_after_truncation;
  throw Error(ErrorCode::InvalidArgument, "unknown role tag '" + std::string(s) + "'");
}

const char* to_string(FinishReason reason) noexcept {
  switch (reason) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::aborted: return "aborted";
  }
  return "stop";
}

void LlmRequest::validate() const {
  if (want_logprobs && top_logprobs < 1) {
    throw Error(ErrorCode::InvalidArgument, "top_logprobs must be >= 1 when logprobs are requested");
  }
  if (temperature < 0.0) throw Error(ErrorCode::InvalidArgument, "temperature must be >= 0");
  if (max_tokens < 1) throw Error(ErrorCode::InvalidArgument, "max_tokens must be >= 1");
}

std::string api_key_from_env() {
  const char* v = std::getenv("OPTEXIT_API_KEY");
  return v ? std::string(v) : std::string();
}

struct HttpLlmClient::Target {
  std::string scheme_host_port;
  std::string path;
};

namespace {

bool transient_status(int status) { return status == 408 || status == 429 || status >= 500; }

std::chrono::milliseconds backoff_delay(const RetryPolicy& p, int attempt) {
  // Full jitter: uniform in [0, base * factor^attempt].
  thread_local std::mt19937_64 rng{std::random_device{}()};
  const double cap = static_cast<double>(p.base_delay.count()) * std::pow(p.factor, attempt);
  std::uniform_real_distribution<double> dist(0.0, std::max(cap, 0.0));
  return std::chrono::milliseconds(static_cast<long long>(dist(rng)));
}

}  // namespace

HttpLlmClient::HttpLlmClient(EndpointConfig config)
    : config_(std::move(config)), target_(std::make_unique<Target>()), limiter_(config_.max_inflight) {
  if (config_.url.empty()) throw Error(ErrorCode::InvalidArgument, "endpoint URL is empty");
  std::string url = config_.url;
  while (!url.empty() && url.back() == '/') url.pop_back();
  const auto scheme_end = url.find("://");
  const auto path_start = url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  std::string base_path;
  if (path_start == std::string::npos) {
    target_->scheme_host_port = url;
  } else {
    target_->scheme_host_port = url.substr(0, path_start);
    base_path = url.substr(path_start);
  }
  if (base_path.size() >= 3 && base_path.compare(base_path.size() - 3, 3, "/v1") == 0) {
    target_->path = base_path + "/chat/completions";
  } else {
    target_->path = base_path + wire::kChatPath;
  }
}

HttpLlmClient::~HttpLlmClient() = default;

namespace {

httplib::Headers make_headers(const EndpointConfig& cfg, const LlmRequest& r, bool stream) {
  httplib::Headers h;
  if (!cfg.api_key.empty()) h.emplace("Authorization", "Bearer " + cfg.api_key);
  h.emplace(wire::kRoleHeader, to_string(r.role));
  if (r.truncation_index) h.emplace(wire::kTruncationHeader, std::to_string(*r.truncation_index));
  if (stream) h.emplace("Accept", "text/event-stream");
  return h;
}

ErrorCode classify(httplib::Error e) {
  switch (e) {
    case httplib::Error::Read:
    case httplib::Error::ConnectionTimeout:
      return ErrorCode::Timeout;
    default:
      return ErrorCode::Transport;
  }
}

std::unique_ptr<httplib::Client> make_client(const std::string& shp, const EndpointConfig& cfg) {
  auto cli = std::make_unique<httplib::Client>(shp);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg.timeout).count();
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg.timeout).count() % 1000000;
  cli->set_connection_timeout(secs, usecs);
  cli->set_read_timeout(secs, usecs);
  cli->set_write_timeout(secs, usecs);
  cli->set_keep_alive(false);
  return cli;
}

}  // namespace

Completion HttpLlmClient::complete(const LlmRequest& request) {
  request.validate();
  const std::string body = wire::encode_request(request, config_.model, false);
  InflightLimiter::Guard guard(limiter_);
  for (int attempt = 0;; ++attempt) {
    auto cli = make_client(target_->scheme_host_port, config_);
    auto res = cli->Post(target_->path, make_headers(config_, request, false), body, "application/json");
    const bool last = attempt >= config_.retry.max_retries;
    if (!res) {
      if (last) {
        throw TransportError(classify(res.error()), 0,
                             "POST " + config_.url + ": " + httplib::to_string(res.error()));
      }
    } else if (res->status == 200) {
      return wire::decode_completion(res->body, request.want_logprobs);
    } else if (last || !transient_status(res->status)) {
      throw TransportError(ErrorCode::Transport, res->status, "POST " + config_.url + ": " + res->body);
    }
    std::this_thread::sleep_for(backoff_delay(config_.retry, attempt));
  }
}

Completion HttpLlmClient::stream(const LlmRequest& request, const TokenConsumer& on_token) {
  request.validate();
  const std::string body = wire::encode_request(request, config_.model, true);
  InflightLimiter::Guard guard(limiter_);
  for (int attempt = 0;; ++attempt) {
    auto cli = make_client(target_->scheme_host_port, config_);
    wire::StreamDecoder decoder(request.want_logprobs);
    bool aborted = false;
    std::string error_body;
    int status = 0;

    httplib::Request req;
    req.method = "POST";
    req.path = target_->path;
    req.headers = make_headers(config_, request, true);
    req.body = body;
    req.set_header("Content-Type", "application/json");
    req.response_handler = [&](const httplib::Response& r) {
      status = r.status;
      return true;
    };
    req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
      if (status != 200) {
        error_body.append(data, len);
        return true;
      }
      if (!decoder.feed(std::string_view(data, len), on_token)) {
        aborted = true;
        return false;
      }
      return true;
    };
    auto res = cli->send(req);
    const bool last = attempt >= config_.retry.max_retries;
    if (aborted) {
      Completion c;
      c.text = decoder.text();
      c.tokens = decoder.tokens();
      c.completion_tokens = decoder.token_count();
      c.finish_reason = FinishReason::aborted;
      return c;
    }
    if (res && status == 200) {
      Completion c;
      c.text = decoder.text();
      c.tokens = decoder.tokens();
      c.completion_tokens = decoder.token_count();
      c.finish_reason = decoder.finish_reason().value_or(FinishReason::stop);
      return c;
    }
    if (decoder.token_count() > 0) {
      // Tokens were already delivered; a replay would duplicate them.
      throw TransportError(ErrorCode::Transport, status, "stream interrupted after " +
                                                             std::to_string(decoder.token_count()) + " tokens");
    }
    if (!res) {
      if (last) {
        throw TransportError(classify(res.error()), 0,
                             "POST " + config_.url + ": " + httplib::to_string(res.error()));
      }
    } else if (last || !transient_status(status)) {
      throw TransportError(ErrorCode::Transport, status, "POST " + config_.url + ": " + error_body);
    }
    std::this_thread::sleep_for(backoff_delay(config_.retry, attempt));
  }
}

}  // namespace optexit::llm
