// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <json.hpp>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"
#include "optexit/curation/curation.hpp"

namespace optexit::curation {

namespace {

struct Binding {
  std::string_view name;
  std::string_view value;
};

// Single-pass placeholder substitution.
std::string render(std::string_view tmpl, std::initializer_list<Binding> bindings) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const std::size_t close = tmpl.find('}', i);
      if (close != std::string_view::npos) {
        const std::string_view key = tmpl.substr(i + 1, close - i - 1);
        bool replaced = false;
        for (const auto& b : bindings) {
          if (b.name == key) {
            out += b.value;
            replaced = true;
            break;
          }
        }
        if (replaced) {
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

}  // namespace

PromptTemplates load_prompt_templates(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(1, "prompts", e.what());
  }
  PromptTemplates t;
  auto take = [&](const char* key, std::string& slot) {
    if (auto it = j.find(key); it != j.end()) {
      if (!it->is_string()) throw SchemaError(1, key, "expected string");
      slot = it->get<std::string>();
    }
  };
  take("extract", t.extract);
  take("identify", t.identify);
  take("feedback", t.feedback);
  take("verify", t.verify);
  return t;
}

std::string extract_prompt(const PromptTemplates& t, std::string_view solution) {
  return render(t.extract, {{"solution", solution}});
}

std::string identify_prompt(const PromptTemplates& t, std::string_view answer, std::string_view cot,
                            std::string_view feedback) {
  return render(t.identify, {{"answer", answer}, {"cot", cot}, {"feedback", feedback}});
}

std::string feedback_line(const PromptTemplates& t, std::string_view rejected_span) {
  return render(t.feedback, {{"span", rejected_span}});
}

std::string verify_prompt(const PromptTemplates& t, std::string_view span, std::string_view answer) {
  return render(t.verify, {{"span", span}, {"answer", answer}});
}

std::string normalize_answer(std::string_view answer) {
  std::string s = collapse_whitespace(answer);
  while (!s.empty() && std::string_view(".,;:!?").find(s.back()) != std::string_view::npos) {
    s.pop_back();
    while (!s.empty() && s.back() == ' ') s.pop_back();
  }
  return s;
}

bool answers_equal(std::string_view a, std::string_view b) {
  const std::string na = normalize_answer(a);
  return !na.empty() && na == normalize_answer(b);
}

std::optional<std::string> parse_boxed(std::string_view text) {
  constexpr std::string_view kMarker = "\\boxed{";
  const std::size_t at = text.rfind(kMarker);
  if (at == std::string_view::npos) return std::nullopt;
  const std::size_t begin = at + kMarker.size();
  int depth = 1;
  for (std::size_t i = begin; i < text.size(); ++i) {
    if (text[i] == '\\' && i + 1 < text.size()) {
      ++i;  // \{ is literal
      continue;
    }
    if (text[i] == '{') ++depth;
    if (text[i] == '}' && --depth == 0) return std::string(text.substr(begin, i - begin));
  }
  return std::nullopt;
}

std::string extract_answer(std::string_view solution, llm::LlmClient* llm, const PromptTemplates& prompts) {
  if (trim(solution).empty()) throw Error(ErrorCode::EmptySolution, "solution text is empty");
  if (auto boxed = parse_boxed(solution)) {
    std::string normalized = normalize_answer(*boxed);
    if (!normalized.empty()) return normalized;
  }
  if (!llm) throw Error(ErrorCode::LlmRefusal, "no \\boxed{} answer and no pipeline model configured");
  llm::LlmRequest req;
  req.role = llm::Role::extract;
  req.user_prompt = extract_prompt(prompts, solution);
  req.max_tokens = 256;
  std::string reply = llm->complete(req).text;
  if (auto boxed = parse_boxed(reply)) reply = *boxed;
  std::string normalized = normalize_answer(reply);
  if (normalized.empty() || to_lower(normalized) == "none") {
    throw Error(ErrorCode::LlmRefusal, "extraction returned no answer");
  }
  return normalized;
}

std::string try_extract_answer(std::string_view solution, llm::LlmClient* llm, const PromptTemplates& prompts) {
  try {
    return extract_answer(solution, llm, prompts);
  } catch (const Error& e) {
    if (e.category() == ErrorCategory::transport) throw;
    return {};
  }
}

}  // namespace optexit::curation
