// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include "optexit/llm/mock.hpp"

#include <cctype>
#include <cmath>
#include <json.hpp>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"

namespace optexit::llm {

using json = nlohmann::ordered_json;

namespace {

bool hashes_compatible(const MockEntry& a, const MockEntry& b) {
  return !a.prompt_sha256 || !b.prompt_sha256 || *a.prompt_sha256 == *b.prompt_sha256;
}

std::int64_t text_token_id(std::string_view text) {
  // FNV-1a folded into a 50k vocabulary.
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return static_cast<std::int64_t>(h % 50000);
}

TokenRecord token_from_json(const json& j, std::size_t line) {
  if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
    throw SchemaError(line, "response_tokens", "token needs a string 'text'");
  }
  TokenRecord t;
  t.token_text = j["text"].get<std::string>();
  t.token_id = j.value("id", text_token_id(t.token_text));
  if (auto probs = j.find("probs"); probs != j.end()) {
    if (!probs->is_array() || probs->empty()) throw SchemaError(line, "response_tokens", "probs must be non-empty");
    for (std::size_t i = 0; i < probs->size(); ++i) {
      const double p = (*probs)[i].get<double>();
      if (!(p > 0.0 && p <= 1.0)) throw SchemaError(line, "response_tokens", "probs must lie in (0, 1]");
      t.top_k.push_back(TopKEntry{static_cast<std::int64_t>(i), std::log(p)});
    }
    std::stable_sort(t.top_k.begin(), t.top_k.end(),
                     [](const TopKEntry& a, const TopKEntry& b) { return a.logprob > b.logprob; });
    t.token_id = j.value("id", t.top_k.front().token_id);
    t.chosen_logprob = j.contains("lp") ? j["lp"].get<double>() : t.top_k.front().logprob;
  } else {
    t.chosen_logprob = j.value("lp", 0.0);
    if (auto topk = j.find("topk"); topk != j.end()) {
      for (const auto& e : *topk) {
        if (!e.is_array() || e.size() != 2) throw SchemaError(line, "response_tokens", "topk entries are [id, lp]");
        t.top_k.push_back(TopKEntry{e[0].get<std::int64_t>(), e[1].get<double>()});
      }
    }
  }
  return t;
}

json token_to_json(const TokenRecord& t) {
  json topk = json::array();
  for (const auto& e : t.top_k) topk.push_back(json::array({e.token_id, e.logprob}));
  return json{{"text", t.token_text}, {"id", t.token_id}, {"lp", t.chosen_logprob}, {"topk", std::move(topk)}};
}

// Default logprobs for tokens the script did not annotate.
void annotate_default_logprobs(TokenRecord& t, int k) {
  k = std::max(k, 1);
  t.token_id = text_token_id(t.token_text);
  t.chosen_logprob = std::log(0.9);
  t.top_k.clear();
  t.top_k.push_back(TopKEntry{t.token_id, std::log(0.9)});
  for (int i = 1; i < k; ++i) {
    t.top_k.push_back(TopKEntry{(t.token_id + i) % 50000, std::log(0.1 / (k - 1))});
  }
}

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

MockScript::MockScript(std::vector<MockEntry> entries) : entries_(std::move(entries)) {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    for (std::size_t j = i + 1; j < entries_.size(); ++j) {
      if (entries_[i].role == entries_[j].role && hashes_compatible(entries_[i], entries_[j])) {
        throw Error(ErrorCode::ScriptAmbiguity, "entries " + std::to_string(i + 1) + " and " +
                                                    std::to_string(j + 1) + " overlap (role " +
                                                    to_string(entries_[i].role) + ")");
      }
    }
  }
}

MockScript MockScript::parse(std::string_view text) {
  std::vector<MockEntry> entries;
  std::size_t line = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line;
    const std::string content = trim(text.substr(pos, nl - pos));
    pos = nl + 1;
    if (content.empty()) continue;
    json j;
    try {
      j = json::parse(content);
    } catch (const json::exception& e) {
      throw SchemaError(line, "record", e.what());
    }
    MockEntry e;
    if (!j.contains("role_tag") || !j["role_tag"].is_string()) throw SchemaError(line, "role_tag", "missing");
    e.role = role_from_string(j["role_tag"].get<std::string>());
    if (!j.contains("match") || !j["match"].is_object()) throw SchemaError(line, "match", "missing object");
    const json& m = j["match"];
    if (auto h = m.find("prompt_sha256"); h != m.end()) e.prompt_sha256 = to_lower(h->get<std::string>());
    if (auto a = m.find("answer_from_index"); a != m.end()) {
      if (!a->is_number_integer() || a->get<std::int64_t>() < 0) {
        throw SchemaError(line, "match", "answer_from_index must be a non-negative integer");
      }
      e.answer_from_index = a->get<std::size_t>();
    }
    if (!e.prompt_sha256 && !e.answer_from_index) throw SchemaError(line, "match", "empty matcher");
    if (auto it = j.find("response_tokens"); it != j.end() && !it->is_null()) {
      if (!it->is_array()) throw SchemaError(line, "response_tokens", "expected array");
      std::vector<TokenRecord> toks;
      for (const auto& t : *it) toks.push_back(token_from_json(t, line));
      std::string joined;
      for (const auto& t : toks) joined += t.token_text;
      if (j.contains("response_text") && j["response_text"].get<std::string>() != joined) {
        throw SchemaError(line, "response_text", "does not equal concatenated response_tokens");
      }
      e.response_text = joined;
      e.response_tokens = std::move(toks);
    } else {
      if (!j.contains("response_text") || !j["response_text"].is_string()) {
        throw SchemaError(line, "response_text", "missing");
      }
      e.response_text = j["response_text"].get<std::string>();
    }
    if (auto f = j.find("fallback_text"); f != j.end()) e.fallback_text = f->get<std::string>();
    entries.push_back(std::move(e));
  }
  return MockScript(std::move(entries));
}

MockScript MockScript::load(const std::filesystem::path& path) { return parse(read_file(path)); }

std::string MockScript::serialize() const {
  std::string out;
  for (const auto& e : entries_) {
    json j;
    j["role_tag"] = to_string(e.role);
    json m = json::object();
    if (e.prompt_sha256) m["prompt_sha256"] = *e.prompt_sha256;
    if (e.answer_from_index) m["answer_from_index"] = *e.answer_from_index;
    j["match"] = std::move(m);
    j["response_text"] = e.response_text;
    if (e.response_tokens) {
      json toks = json::array();
      for (const auto& t : *e.response_tokens) toks.push_back(token_to_json(t));
      j["response_tokens"] = std::move(toks);
    }
    if (e.answer_from_index) j["fallback_text"] = e.fallback_text;
    out += j.dump();
    out.push_back('\n');
  }
  return out;
}

const MockEntry* MockScript::match(Role role, std::string_view user_prompt,
                                   std::optional<std::size_t> truncation_index) const {
  std::optional<std::string> hash;
  for (const auto& e : entries_) {
    if (e.role != role) continue;
    if (e.answer_from_index && !truncation_index) continue;
    if (e.prompt_sha256) {
      if (!hash) hash = sha256_hex(user_prompt);
      if (*hash != *e.prompt_sha256) continue;
    }
    return &e;
  }
  return nullptr;
}

std::vector<std::string> mock_tokenize(std::string_view text) {
  constexpr std::string_view kMarkers[] = {"</think>", "<think>"};
  auto marker_at = [&](std::size_t pos) -> std::size_t {
    for (auto m : kMarkers) {
      if (text.substr(pos, m.size()) == m) return m.size();
    }
    return 0;
  };
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (const std::size_t len = marker_at(i)) {
      out.emplace_back(text.substr(i, len));
      i += len;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_ws(text[j])) ++j;
    while (j < text.size() && !is_ws(text[j]) && (j == i || !marker_at(j))) ++j;
    out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

Completion MockEngine::respond(const wire::ParsedRequest& request) const {
  const MockEntry* e = script_.match(request.role, request.user_prompt, request.truncation_index);
  if (!e) {
    throw Error(ErrorCode::NoScriptMatch, std::string("no entry for role ") + to_string(request.role) +
                                              " prompt_sha256 " + sha256_hex(request.user_prompt));
  }
  const bool answered = !e->answer_from_index || *request.truncation_index >= *e->answer_from_index;
  Completion c;
  const int k = request.top_logprobs > 0 ? request.top_logprobs : 1;
  if (answered && e->response_tokens) {
    c.tokens = *e->response_tokens;
  } else {
    for (auto& piece : mock_tokenize(answered ? e->response_text : e->fallback_text)) {
      TokenRecord t;
      t.token_text = std::move(piece);
      annotate_default_logprobs(t, k);
      c.tokens.push_back(std::move(t));
    }
  }
  c.finish_reason = FinishReason::stop;
  if (request.max_tokens > 0 && c.tokens.size() > static_cast<std::size_t>(request.max_tokens)) {
    c.tokens.resize(static_cast<std::size_t>(request.max_tokens));
    c.finish_reason = FinishReason::length;
  }
  for (std::size_t i = 0; i < c.tokens.size(); ++i) {
    c.tokens[i].index = i;
    if (c.tokens[i].top_k.size() > static_cast<std::size_t>(k)) c.tokens[i].top_k.resize(k);
    c.text += c.tokens[i].token_text;
  }
  c.completion_tokens = c.tokens.size();
  return c;
}

// ---------------------------------------------------------------------------

wire::ParsedRequest MockLlmClient::to_parsed(const LlmRequest& r, bool stream) {
  r.validate();
  {
    std::lock_guard lock(mu_);
    log_.push_back(r);
  }
  wire::ParsedRequest p;
  p.role = r.role;
  p.system_prompt = r.system_prompt;
  p.user_prompt = r.user_prompt;
  p.assistant_prefix = r.assistant_prefix;
  p.truncation_index = r.truncation_index;
  p.max_tokens = r.max_tokens;
  p.stream = stream;
  p.logprobs = r.want_logprobs;
  p.top_logprobs = r.top_logprobs;
  return p;
}

Completion MockLlmClient::strip(Completion c, bool want_logprobs, int top_logprobs) const {
  for (auto& t : c.tokens) {
    if (!want_logprobs) {
      t.token_id = -1;
      t.chosen_logprob = 0.0;
      t.top_k.clear();
    } else if (t.top_k.size() > static_cast<std::size_t>(top_logprobs)) {
      t.top_k.resize(static_cast<std::size_t>(top_logprobs));
    }
  }
  return c;
}

Completion MockLlmClient::complete(const LlmRequest& request) {
  Completion c = strip(engine_.respond(to_parsed(request, false)), request.want_logprobs, request.top_logprobs);
  if (!request.want_logprobs) c.tokens.clear();
  return c;
}

Completion MockLlmClient::stream(const LlmRequest& request, const TokenConsumer& on_token) {
  Completion full = strip(engine_.respond(to_parsed(request, true)), request.want_logprobs, request.top_logprobs);
  Completion out;
  out.finish_reason = full.finish_reason;
  for (const auto& t : full.tokens) {
    out.text += t.token_text;
    if (request.want_logprobs) out.tokens.push_back(t);
    ++out.completion_tokens;
    if (!on_token(t)) {
      out.finish_reason = FinishReason::aborted;
      break;
    }
  }
  return out;
}

std::vector<LlmRequest> MockLlmClient::requests() const {
  std::lock_guard lock(mu_);
  return log_;
}

std::size_t MockLlmClient::request_count() const {
  std::lock_guard lock(mu_);
  return log_.size();
}

}  // namespace optexit::llm
