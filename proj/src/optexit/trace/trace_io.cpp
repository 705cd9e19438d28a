// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <json.hpp>
#include <set>
#include <sstream>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"
#include "optexit/trace/trace.hpp"

namespace optexit {

using json = nlohmann::ordered_json;

namespace {

// Splits into lines, remembering 1-based line numbers; blank lines are skipped.
std::vector<std::pair<std::size_t, std::string_view>> split_lines(std::string_view text) {
  std::vector<std::pair<std::size_t, std::string_view>> out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) out.emplace_back(line_no, line);
    if (nl == text.size()) break;
    pos = nl + 1;
  }
  return out;
}

json parse_line(std::size_t line, std::string_view text) {
  try {
    json j = json::parse(text);
    if (!j.is_object()) throw SchemaError(line, "record", "not a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw SchemaError(line, "record", e.what());
  }
}

const json& require(const json& obj, std::size_t line, const char* key, const char* field) {
  auto it = obj.find(key);
  if (it == obj.end()) throw SchemaError(line, field, "missing key '" + std::string(key) + "'");
  return *it;
}

std::string require_string(const json& obj, std::size_t line, const char* key, const char* field) {
  const json& v = require(obj, line, key, field);
  if (!v.is_string()) throw SchemaError(line, field, "expected string");
  return v.get<std::string>();
}

std::int64_t require_int(const json& v, std::size_t line, const char* field) {
  if (!v.is_number_integer()) throw SchemaError(line, field, "expected integer");
  return v.get<std::int64_t>();
}

double require_logprob(const json& v, std::size_t line, const char* field) {
  if (!v.is_number()) throw SchemaError(line, field, "expected number");
  const double lp = v.get<double>();
  if (!std::isfinite(lp) || lp > 0.0) throw SchemaError(line, field, "logprob must be finite and <= 0");
  return lp;
}

Trace trace_from_json(const json& j, std::size_t line) {
  Trace t;
  t.trace_id = require_string(j, line, "trace_id", "trace_id");
  if (t.trace_id.empty()) throw SchemaError(line, "trace_id", "empty");
  t.prompt = require_string(j, line, "prompt", "prompt");
  t.source = require_string(j, line, "source", "source");
  t.model = require_string(j, line, "model", "model");
  const std::int64_t k = require_int(require(j, line, "k", "k"), line, "k");
  if (k < 1) throw SchemaError(line, "k", "must be >= 1");
  t.k = static_cast<std::size_t>(k);
  t.solution_text = require_string(j, line, "solution_text", "solution_text");
  const json& fa = require(j, line, "final_answer", "final_answer");
  if (fa.is_string()) {
    t.final_answer = fa.get<std::string>();
  } else if (!fa.is_null()) {
    throw SchemaError(line, "final_answer", "expected string or null");
  }
  const json& toks = require(j, line, "cot_tokens", "cot_tokens");
  if (!toks.is_array() || toks.empty()) throw SchemaError(line, "cot_tokens", "expected non-empty array");
  t.cot_tokens.reserve(toks.size());
  for (std::size_t n = 0; n < toks.size(); ++n) {
    const json& r = toks[n];
    if (!r.is_object()) throw SchemaError(line, "cot_tokens", "token record is not an object");
    TokenRecord rec;
    const std::int64_t idx = require_int(require(r, line, "i", "index"), line, "index");
    if (idx != static_cast<std::int64_t>(n)) throw SchemaError(line, "index", "indices must be 0..M-1 contiguous");
    rec.index = n;
    rec.token_id = require_int(require(r, line, "id", "token_id"), line, "token_id");
    rec.token_text = require_string(r, line, "text", "token_text");
    rec.chosen_logprob = require_logprob(require(r, line, "lp", "chosen_logprob"), line, "chosen_logprob");
    const json& topk = require(r, line, "topk", "top_k");
    if (!topk.is_array()) throw SchemaError(line, "top_k", "expected array");
    if (topk.size() != t.k) {
      throw SchemaError(line, "top_k", "length " + std::to_string(topk.size()) + " != k " + std::to_string(t.k));
    }
    rec.top_k.reserve(topk.size());
    for (const json& e : topk) {
      if (!e.is_array() || e.size() != 2) throw SchemaError(line, "top_k", "entries must be [id, lp] pairs");
      TopKEntry entry;
      entry.token_id = require_int(e[0], line, "top_k");
      entry.logprob = require_logprob(e[1], line, "top_k");
      if (!rec.top_k.empty() && entry.logprob > rec.top_k.back().logprob) {
        throw SchemaError(line, "top_k", "not sorted by logprob descending");
      }
      rec.top_k.push_back(entry);
    }
    t.cot_tokens.push_back(std::move(rec));
  }
  return t;
}

json trace_to_json(const Trace& t) {
  json j;
  j["trace_id"] = t.trace_id;
  j["prompt"] = t.prompt;
  j["source"] = t.source;
  j["model"] = t.model;
  j["k"] = t.k;
  j["solution_text"] = t.solution_text;
  j["final_answer"] = t.final_answer ? json(*t.final_answer) : json(nullptr);
  json toks = json::array();
  for (const auto& r : t.cot_tokens) {
    json topk = json::array();
    for (const auto& e : r.top_k) topk.push_back(json::array({e.token_id, e.logprob}));
    toks.push_back(json{{"i", r.index}, {"id", r.token_id}, {"text", r.token_text},
                        {"lp", r.chosen_logprob}, {"topk", std::move(topk)}});
  }
  j["cot_tokens"] = std::move(toks);
  return j;
}

std::vector<std::uint8_t> bit_array(const json& j, std::size_t line, const char* field) {
  if (!j.is_array()) throw SchemaError(line, field, "expected array");
  std::vector<std::uint8_t> out;
  out.reserve(j.size());
  for (const json& v : j) {
    if (!v.is_number_integer() || (v.get<int>() != 0 && v.get<int>() != 1)) {
      throw SchemaError(line, field, "entries must be 0 or 1");
    }
    out.push_back(static_cast<std::uint8_t>(v.get<int>()));
  }
  return out;
}

std::size_t require_size(const json& obj, std::size_t line, const char* key, const char* field) {
  const std::int64_t v = require_int(require(obj, line, key, field), line, field);
  if (v < 0) throw SchemaError(line, field, "must be >= 0");
  return static_cast<std::size_t>(v);
}

}  // namespace

std::vector<Trace> parse_traces(std::string_view text) {
  std::vector<Trace> out;
  std::set<std::string> seen;
  for (auto [line, content] : split_lines(text)) {
    Trace t = trace_from_json(parse_line(line, content), line);
    if (!seen.insert(t.trace_id).second) {
      throw Error(ErrorCode::DuplicateTraceId, "'" + t.trace_id + "' at line " + std::to_string(line));
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<Trace> load_traces(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  return parse_traces(read_file(path));
}

std::string serialize_trace(const Trace& trace) { return trace_to_json(trace).dump(); }

void save_traces(const std::filesystem::path& path, std::span<const Trace> traces) {
  std::string out;
  for (const auto& t : traces) {
    out += serialize_trace(t);
    out.push_back('\n');
  }
  write_file(path, out);
}

std::vector<LabeledTrace> parse_labeled(std::string_view text) {
  std::vector<LabeledTrace> out;
  std::set<std::string> seen;
  for (auto [line, content] : split_lines(text)) {
    const json j = parse_line(line, content);
    LabeledTrace lt;
    lt.trace = trace_from_json(j, line);
    if (!seen.insert(lt.trace.trace_id).second) {
      throw Error(ErrorCode::DuplicateTraceId, "'" + lt.trace.trace_id + "' at line " + std::to_string(line));
    }
    const json& a = require(j, line, "answer", "answer");
    if (!a.is_object()) throw SchemaError(line, "answer", "expected object");
    lt.answer.trace_id = lt.trace.trace_id;
    lt.answer.span_text = require_string(a, line, "span_text", "span_text");
    lt.answer.char_start = require_size(a, line, "char_start", "char_start");
    lt.answer.char_end = require_size(a, line, "char_end", "char_end");
    lt.answer.token_index = require_size(a, line, "token_index", "token_index");
    const json& verified = require(a, line, "verified", "verified");
    if (!verified.is_boolean()) throw SchemaError(line, "verified", "expected boolean");
    lt.answer.verified = verified.get<bool>();
    lt.answer.retries_used = require_size(a, line, "retries_used", "retries_used");
    lt.labels = bit_array(require(j, line, "labels", "labels"), line, "labels");
    lt.loss_mask = bit_array(require(j, line, "loss_mask", "loss_mask"), line, "loss_mask");
    try {
      validate_labeled(lt);
    } catch (const Error& e) {
      throw SchemaError(line, "labels", e.what());
    }
    out.push_back(std::move(lt));
  }
  return out;
}

std::vector<LabeledTrace> load_labeled(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  return parse_labeled(read_file(path));
}

std::string serialize_labeled(const LabeledTrace& lt) {
  json j = trace_to_json(lt.trace);
  j["answer"] = json{{"span_text", lt.answer.span_text},
                     {"char_start", lt.answer.char_start},
                     {"char_end", lt.answer.char_end},
                     {"token_index", lt.answer.token_index},
                     {"verified", lt.answer.verified},
                     {"retries_used", lt.answer.retries_used}};
  j["labels"] = lt.labels;
  j["loss_mask"] = lt.loss_mask;
  return j.dump();
}

void save_labeled(const std::filesystem::path& path, std::span<const LabeledTrace> labeled) {
  std::string out;
  for (const auto& lt : labeled) {
    out += serialize_labeled(lt);
    out.push_back('\n');
  }
  write_file(path, out);
}

std::vector<PromptItem> load_prompts(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  const std::string text = read_file(path);
  std::vector<PromptItem> out;
  std::set<std::string> seen;
  for (auto [line, content] : split_lines(text)) {
    const json j = parse_line(line, content);
    PromptItem item;
    item.trace_id = require_string(j, line, "trace_id", "trace_id");
    item.prompt = require_string(j, line, "prompt", "prompt");
    if (auto it = j.find("final_answer"); it != j.end() && it->is_string()) {
      item.final_answer = it->get<std::string>();
    }
    if (auto it = j.find("cot_tokens"); it != j.end() && it->is_array()) {
      item.reference_length = it->size();
    }
    if (!seen.insert(item.trace_id).second) {
      throw Error(ErrorCode::DuplicateTraceId, "'" + item.trace_id + "' at line " + std::to_string(line));
    }
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace optexit
