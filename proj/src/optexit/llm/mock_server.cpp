// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <httplib.h>

#include <json.hpp>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"
#include "optexit/llm/mock.hpp"

namespace optexit::llm {

struct MockServer::Impl {
  explicit Impl(MockScript script) : engine(std::move(script)) {}

  MockEngine engine;
  httplib::Server server;
};

namespace {

std::string error_body(std::string_view message) {
  nlohmann::json j;
  j["error"] = {{"message", message}, {"type", "invalid_request_error"}};
  return j.dump();
}

}  // namespace

MockServer::MockServer(MockScript script, const std::string& host, int port)
    : impl_(std::make_unique<Impl>(std::move(script))), host_(host) {
  auto handler = [this](const httplib::Request& req, httplib::Response& res) {
    ++requests_;
    wire::ParsedRequest parsed;
    Completion completion;
    try {
      parsed = wire::decode_request(req.body, req.get_header_value(wire::kRoleHeader),
                                    req.get_header_value(wire::kTruncationHeader));
      completion = impl_->engine.respond(parsed);
    } catch (const Error& e) {
      res.status = e.code() == ErrorCode::NoScriptMatch ? 404 : 400;
      res.set_content(error_body(e.what()), "application/json");
      return;
    }
    // Identical request bytes yield identical ids and therefore identical bodies.
    const std::string id = "chatcmpl-mock-" + sha256_hex(req.body).substr(0, 16);
    const std::string model = parsed.model.empty() ? "mock" : parsed.model;
    if (!parsed.stream) {
      res.set_content(wire::encode_completion(completion, id, model, parsed.logprobs, parsed.top_logprobs),
                      "application/json");
      return;
    }
    auto events = std::make_shared<std::vector<std::string>>(
        wire::encode_stream(completion, id, model, parsed.logprobs, parsed.top_logprobs));
    res.set_chunked_content_provider("text/event-stream",
                                     [events, next = std::size_t{0}](std::size_t, httplib::DataSink& sink) mutable {
                                       if (next < events->size()) {
                                         const std::string& ev = (*events)[next++];
                                         return sink.write(ev.data(), ev.size());
                                       }
                                       sink.done();
                                       return true;
                                     });
  };
  impl_->server.Post(wire::kChatPath, handler);
  impl_->server.Post("/chat/completions", handler);
  impl_->server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
    if (port_ < 0) throw Error(ErrorCode::PortInUse, "cannot bind " + host);
  } else {
    if (!impl_->server.bind_to_port(host, port)) {
      throw Error(ErrorCode::PortInUse, host + ":" + std::to_string(port));
    }
    port_ = port;
  }
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

MockServer::~MockServer() { stop(); }

void MockServer::stop() {
  if (thread_.joinable()) {
    impl_->server.stop();
    thread_.join();
  }
}

std::string MockServer::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

}  // namespace optexit::llm
