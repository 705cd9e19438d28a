// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include "optexit/trace/trace.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"

namespace optexit {

void ChatTemplate::validate() const {
  if (trim(think_open).empty() || trim(think_close).empty()) {
    throw Error(ErrorCode::TemplateError, "chat template is missing think markers");
  }
  if (think_open == think_close) {
    throw Error(ErrorCode::TemplateError, "think markers must differ");
  }
}

std::string decoded_text(std::span<const TokenRecord> tokens, std::size_t count) {
  count = std::min(count, tokens.size());
  std::string out;
  for (std::size_t i = 0; i < count; ++i) out += tokens[i].token_text;
  return out;
}

std::string decoded_text(std::span<const TokenRecord> tokens) {
  return decoded_text(tokens, tokens.size());
}

bool is_marker(const TokenRecord& token, std::string_view marker) {
  return trim(token.token_text) == marker;
}

ThinkRegion think_region(std::span<const TokenRecord> tokens, const ChatTemplate& tmpl) {
  ThinkRegion region{0, tokens.size()};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (is_marker(tokens[i], tmpl.think_open)) {
      region.begin = i + 1;
      break;
    }
  }
  for (std::size_t i = region.begin; i < tokens.size(); ++i) {
    if (is_marker(tokens[i], tmpl.think_close)) {
      region.end = i;
      break;
    }
  }
  return region;
}

LabeledTrace assign_labels(const Trace& trace, const AnswerPosition& answer, const ChatTemplate& tmpl) {
  if (!answer.verified) throw Error(ErrorCode::UnverifiedAnswer, trace.trace_id);
  const std::size_t m = trace.length();
  if (answer.token_index >= m) {
    throw Error(ErrorCode::IndexOutOfRange, "token_index " + std::to_string(answer.token_index) +
                                                " >= M " + std::to_string(m));
  }
  LabeledTrace out;
  out.trace = trace;
  out.answer = answer;
  out.answer.trace_id = trace.trace_id;
  out.labels.resize(m);
  out.loss_mask.assign(m, 0);
  for (std::size_t i = 0; i < m; ++i) out.labels[i] = i >= answer.token_index ? 1 : 0;
  const ThinkRegion region = think_region(trace.cot_tokens, tmpl);
  for (std::size_t i = region.begin; i < region.end; ++i) out.loss_mask[i] = 1;
  if (region.begin >= region.end) {
    throw Error(ErrorCode::EmptyLossMask, trace.trace_id + ": think region holds no tokens");
  }
  return out;
}

void validate_labeled(const LabeledTrace& lt) {
  const std::size_t m = lt.trace.length();
  if (!lt.answer.verified) throw Error(ErrorCode::UnverifiedAnswer, lt.trace.trace_id);
  if (lt.answer.token_index >= m) throw Error(ErrorCode::IndexOutOfRange, "token_index >= M");
  if (lt.answer.char_start >= lt.answer.char_end) {
    throw Error(ErrorCode::IndexOutOfRange, "char_start must be < char_end");
  }
  if (lt.labels.size() != m || lt.loss_mask.size() != m) {
    throw Error(ErrorCode::LengthMismatch, "labels and loss_mask must have length M");
  }
  for (std::size_t i = 0; i < m; ++i) {
    if (lt.labels[i] != (i >= lt.answer.token_index ? 1 : 0)) {
      throw Error(ErrorCode::IndexOutOfRange, "labels disagree with token_index at " + std::to_string(i));
    }
  }
  if (std::accumulate(lt.loss_mask.begin(), lt.loss_mask.end(), std::size_t{0}) == 0) {
    throw Error(ErrorCode::EmptyLossMask, lt.trace.trace_id);
  }
}

// ---------------------------------------------------------------------------

void write_sidecar(const std::filesystem::path& path, const FeatureMatrix& f) {
  if (f.values.size() != f.rows * f.dim) {
    throw Error(ErrorCode::InvalidArgument, "feature matrix size != rows * dim");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string());
  out.write(kSidecarMagic, 4);
  write_u32le(out, kSidecarVersion);
  write_u32le(out, static_cast<std::uint32_t>(f.rows));
  write_u32le(out, static_cast<std::uint32_t>(f.dim));
  for (float v : f.values) write_f32le(out, v);
  if (!out) throw Error(ErrorCode::Io, "write failed: " + path.string());
}

FeatureMatrix read_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::MissingFile, path.string());
  char magic[4] = {};
  if (!in.read(magic, 4) || !std::equal(magic, magic + 4, kSidecarMagic)) {
    throw Error(ErrorCode::BadMagic, path.string());
  }
  std::uint32_t version = 0, rows = 0, dim = 0;
  if (!read_u32le(in, version)) throw Error(ErrorCode::BadMagic, "truncated header: " + path.string());
  if (version != kSidecarVersion) {
    throw Error(ErrorCode::VersionMismatch, path.string() + ": version " + std::to_string(version));
  }
  if (!read_u32le(in, rows) || !read_u32le(in, dim)) {
    throw Error(ErrorCode::BadMagic, "truncated header: " + path.string());
  }
  FeatureMatrix f;
  f.trace_id = path.stem().string();
  f.rows = rows;
  f.dim = dim;
  f.values.resize(static_cast<std::size_t>(rows) * dim);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      float v;
      if (!read_f32le(in, v)) throw Error(ErrorCode::Io, "truncated payload: " + path.string());
      if (!std::isfinite(v)) throw NonFiniteValue(r, c);
      f.values[r * dim + c] = v;
    }
  }
  return f;
}

FeatureMatrix attach_features(const Trace& trace, const std::filesystem::path& sidecar) {
  FeatureMatrix f = read_sidecar(sidecar);
  if (f.rows != trace.length()) throw RowCountMismatch(trace.length(), f.rows);
  f.trace_id = trace.trace_id;
  return f;
}

std::filesystem::path sidecar_path(const std::filesystem::path& dir, std::string_view trace_id) {
  return dir / (std::string(trace_id) + ".optx");
}

}  // namespace optexit
