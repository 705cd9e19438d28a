// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include "optexit/llm/wire.hpp"

#include <algorithm>
#include <charconv>
#include <json.hpp>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"

namespace optexit::llm::wire {

using json = nlohmann::ordered_json;

namespace {

const char* finish_string(FinishReason r) {
  switch (r) {
    case FinishReason::stop: return "stop";
    case FinishReason::length: return "length";
    case FinishReason::aborted: return "abort";
  }
  return "stop";
}

FinishReason finish_from(const json& v) {
  if (!v.is_string()) return FinishReason::stop;
  const auto s = v.get<std::string>();
  if (s == "length") return FinishReason::length;
  if (s == "abort" || s == "aborted") return FinishReason::aborted;
  return FinishReason::stop;
}

json logprob_entry(const TokenRecord& t, int top_logprobs) {
  json top = json::array();
  const std::size_t n = std::min<std::size_t>(t.top_k.size(), static_cast<std::size_t>(std::max(top_logprobs, 0)));
  for (std::size_t i = 0; i < n; ++i) {
    // Alternative token text is not tracked by the mock; ids carry identity.
    top.push_back(json{{"token", "token_id:" + std::to_string(t.top_k[i].token_id)},
                       {"logprob", t.top_k[i].logprob},
                       {"token_id", t.top_k[i].token_id}});
  }
  return json{{"token", t.token_text},
              {"logprob", t.chosen_logprob},
              {"token_id", t.token_id},
              {"top_logprobs", std::move(top)}};
}

std::int64_t token_id_of(const json& e) {
  if (auto it = e.find("token_id"); it != e.end() && it->is_number_integer()) return it->get<std::int64_t>();
  if (auto it = e.find("token"); it != e.end() && it->is_string()) {
    const auto s = it->get<std::string>();
    constexpr std::string_view prefix = "token_id:";
    if (s.rfind(prefix, 0) == 0) {
      std::int64_t id = -1;
      std::from_chars(s.data() + prefix.size(), s.data() + s.size(), id);
      return id;
    }
  }
  return -1;
}

double clamp_logprob(const json& v) {
  if (!v.is_number()) throw Error(ErrorCode::MalformedResponse, "logprob is not a number");
  return std::min(0.0, v.get<double>());
}

TokenRecord decode_logprob_entry(const json& e, std::size_t index) {
  if (!e.is_object()) throw Error(ErrorCode::MalformedResponse, "logprob entry is not an object");
  TokenRecord t;
  t.index = index;
  t.token_text = e.value("token", std::string());
  t.token_id = token_id_of(e);
  t.chosen_logprob = clamp_logprob(e.at("logprob"));
  if (auto it = e.find("top_logprobs"); it != e.end() && it->is_array()) {
    for (const auto& alt : *it) {
      t.top_k.push_back(TopKEntry{token_id_of(alt), clamp_logprob(alt.at("logprob"))});
    }
    std::stable_sort(t.top_k.begin(), t.top_k.end(),
                     [](const TopKEntry& a, const TopKEntry& b) { return a.logprob > b.logprob; });
  }
  return t;
}

json parse_json(std::string_view body) {
  try {
    return json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::MalformedResponse, e.what());
  }
}

std::string content_string(const json& msg) {
  auto it = msg.find("content");
  if (it == msg.end() || it->is_null()) return {};
  if (it->is_string()) return it->get<std::string>();
  // Content-part arrays: concatenate text parts.
  std::string out;
  if (it->is_array()) {
    for (const auto& part : *it) {
      if (part.is_object() && part.value("type", "") == "text") out += part.value("text", "");
    }
  }
  return out;
}

}  // namespace

std::string encode_request(const LlmRequest& r, std::string_view model, bool stream) {
  json body;
  body["model"] = model;
  json messages = json::array();
  if (!r.system_prompt.empty()) messages.push_back(json{{"role", "system"}, {"content", r.system_prompt}});
  messages.push_back(json{{"role", "user"}, {"content", r.user_prompt}});
  if (r.assistant_prefix) messages.push_back(json{{"role", "assistant"}, {"content", *r.assistant_prefix}});
  body["messages"] = std::move(messages);
  body["max_tokens"] = r.max_tokens;
  body["temperature"] = r.temperature;
  body["logprobs"] = r.want_logprobs;
  if (r.want_logprobs) body["top_logprobs"] = r.top_logprobs;
  body["stream"] = stream;
  if (r.assistant_prefix) {
    // vLLM / SGLang extension: continue the final assistant message verbatim.
    body["continue_final_message"] = true;
    body["add_generation_prompt"] = false;
  }
  return body.dump();
}

ParsedRequest decode_request(std::string_view body, std::string_view role_header,
                             std::string_view truncation_header) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("request body: ") + e.what());
  }
  ParsedRequest p;
  p.role = role_header.empty() ? Role::generate : role_from_string(role_header);
  if (!truncation_header.empty()) {
    std::size_t v = 0;
    auto [ptr, ec] = std::from_chars(truncation_header.data(),
                                     truncation_header.data() + truncation_header.size(), v);
    if (ec != std::errc() || ptr != truncation_header.data() + truncation_header.size()) {
      throw Error(ErrorCode::InvalidArgument, "bad truncation index header");
    }
    p.truncation_index = v;
  }
  p.model = j.value("model", std::string());
  p.max_tokens = j.value("max_tokens", 0);
  p.stream = j.value("stream", false);
  p.logprobs = j.value("logprobs", false);
  p.top_logprobs = j.value("top_logprobs", 0);
  const auto it = j.find("messages");
  if (it == j.end() || !it->is_array() || it->empty()) {
    throw Error(ErrorCode::InvalidArgument, "request has no messages");
  }
  for (const auto& m : *it) {
    const std::string role = m.value("role", "");
    if (role == "system") p.system_prompt = content_string(m);
    if (role == "user") p.user_prompt = content_string(m);
  }
  if (it->back().value("role", "") == "assistant") p.assistant_prefix = content_string(it->back());
  return p;
}

std::string encode_completion(const Completion& c, std::string_view id, std::string_view model,
                              bool with_logprobs, int top_logprobs) {
  json choice;
  choice["index"] = 0;
  choice["message"] = json{{"role", "assistant"}, {"content", c.text}};
  if (with_logprobs) {
    json content = json::array();
    for (const auto& t : c.tokens) content.push_back(logprob_entry(t, top_logprobs));
    choice["logprobs"] = json{{"content", std::move(content)}};
  } else {
    choice["logprobs"] = nullptr;
  }
  choice["finish_reason"] = finish_string(c.finish_reason);
  json body;
  body["id"] = id;
  body["object"] = "chat.completion";
  body["created"] = 0;
  body["model"] = model;
  body["choices"] = json::array({std::move(choice)});
  body["usage"] = json{{"prompt_tokens", 0},
                       {"completion_tokens", c.tokens.size()},
                       {"total_tokens", c.tokens.size()}};
  return body.dump();
}

Completion decode_completion(std::string_view body, bool want_logprobs) {
  const json j = parse_json(body);
  const auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) {
    throw Error(ErrorCode::MalformedResponse, "response has no choices");
  }
  const json& choice = (*choices)[0];
  Completion c;
  if (auto msg = choice.find("message"); msg != choice.end() && msg->is_object()) {
    c.text = content_string(*msg);
  } else {
    throw Error(ErrorCode::MalformedResponse, "choice has no message");
  }
  c.finish_reason = finish_from(choice.value("finish_reason", json()));
  if (want_logprobs) {
    auto lp = choice.find("logprobs");
    if (lp != choice.end() && lp->is_object()) {
      if (auto content = lp->find("content"); content != lp->end() && content->is_array()) {
        for (const auto& e : *content) c.tokens.push_back(decode_logprob_entry(e, c.tokens.size()));
      }
    }
    if (c.tokens.empty() && !c.text.empty()) {
      throw Error(ErrorCode::MalformedResponse, "logprobs requested but not returned");
    }
  }
  c.completion_tokens = c.tokens.size();
  if (auto usage = j.find("usage"); usage != j.end() && usage->is_object()) {
    c.completion_tokens = usage->value("completion_tokens", c.completion_tokens);
  }
  return c;
}

std::vector<std::string> encode_stream(const Completion& c, std::string_view id, std::string_view model,
                                       bool with_logprobs, int top_logprobs) {
  std::vector<std::string> events;
  events.reserve(c.tokens.size() + 2);
  auto chunk = [&](json delta, json logprobs, json finish) {
    json choice;
    choice["index"] = 0;
    choice["delta"] = std::move(delta);
    choice["logprobs"] = std::move(logprobs);
    choice["finish_reason"] = std::move(finish);
    json body;
    body["id"] = id;
    body["object"] = "chat.completion.chunk";
    body["created"] = 0;
    body["model"] = model;
    body["choices"] = json::array({std::move(choice)});
    return "data: " + body.dump() + "\n\n";
  };
  for (std::size_t i = 0; i < c.tokens.size(); ++i) {
    json delta = i == 0 ? json{{"role", "assistant"}, {"content", c.tokens[i].token_text}}
                        : json{{"content", c.tokens[i].token_text}};
    json lp = with_logprobs ? json{{"content", json::array({logprob_entry(c.tokens[i], top_logprobs)})}}
                            : json(nullptr);
    events.push_back(chunk(std::move(delta), std::move(lp), nullptr));
  }
  events.push_back(chunk(json::object(), nullptr, finish_string(c.finish_reason)));
  events.push_back("data: [DONE]\n\n");
  return events;
}

bool StreamDecoder::feed(std::string_view bytes, const TokenConsumer& sink) {
  buffer_.append(bytes);
  for (;;) {
    const std::size_t nl = buffer_.find('\n');
    if (nl == std::string::npos) return true;
    std::string line = buffer_.substr(0, nl);
    buffer_.erase(0, nl + 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("data:", 0) != 0) continue;  // comments, event names, blank separators
    std::string_view data(line);
    data.remove_prefix(5);
    while (!data.empty() && data.front() == ' ') data.remove_prefix(1);
    if (!handle_event(data, sink)) return false;
  }
}

bool StreamDecoder::handle_event(std::string_view data, const TokenConsumer& sink) {
  if (data == "[DONE]") {
    done_ = true;
    return true;
  }
  const json j = parse_json(data);
  const auto choices = j.find("choices");
  if (choices == j.end() || !choices->is_array() || choices->empty()) return true;
  const json& choice = (*choices)[0];
  if (auto f = choice.find("finish_reason"); f != choice.end() && !f->is_null()) {
    finish_ = finish_from(*f);
  }
  std::vector<TokenRecord> emitted;
  auto lp = choice.find("logprobs");
  const bool has_lp = lp != choice.end() && lp->is_object() && lp->contains("content") &&
                      (*lp)["content"].is_array() && !(*lp)["content"].empty();
  if (has_lp) {
    for (const auto& e : (*lp)["content"]) emitted.push_back(decode_logprob_entry(e, next_index_ + emitted.size()));
  } else if (auto delta = choice.find("delta"); delta != choice.end() && delta->is_object()) {
    const std::string content = content_string(*delta);
    if (!content.empty()) {
      if (want_logprobs_) throw Error(ErrorCode::MalformedResponse, "stream chunk lacks logprobs");
      TokenRecord t;
      t.index = next_index_;
      t.token_id = -1;
      t.token_text = content;
      emitted.push_back(std::move(t));
    }
  }
  for (auto& t : emitted) {
    ++next_index_;
    text_ += t.token_text;
    if (want_logprobs_) tokens_.push_back(t);
    if (!sink(t)) return false;
  }
  return true;
}

}  // namespace optexit::llm::wire
