// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <numeric>

#include "optexit/analysis/confidence.hpp"
#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"
#include "optexit/probe/probe.hpp"

namespace optexit::probe {

ClassWeights class_weights(std::size_t n0, std::size_t n1) {
  if (n0 == 0 || n1 == 0) {
    throw Error(ErrorCode::MissingClass,
                "class counts n0=" + std::to_string(n0) + " n1=" + std::to_string(n1) + " must both be >= 1");
  }
  const double total = static_cast<double>(n0 + n1);
  return ClassWeights{total / (2.0 * static_cast<double>(n0)), total / (2.0 * static_cast<double>(n1))};
}

namespace {

/// Adds scale * d(term)/d(weights) into grad and returns the unscaled loss term.
double token_term(const ProbeModel& model, std::span<const double> x, std::uint8_t y, const ClassWeights& cw,
                  double scale, std::span<double> grad) {
  const double p = sigmoid(model.logit(x));
  double term = 0.0;
  double dz = 0.0;
  if (y == 1) {
    term = -cw.w1 * std::log(std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon));
    if (p >= kProbEpsilon && p <= 1.0 - kProbEpsilon) dz = -cw.w1 * (1.0 - p);
  } else {
    term = -cw.w0 * std::log(1.0 - std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon));
    if (p >= kProbEpsilon && p <= 1.0 - kProbEpsilon) dz = cw.w0 * p;
  }
  if (dz != 0.0) model.logit_and_gradient(x, scale * dz, grad);
  return term;
}

void check_shapes(const FeatureMatrix& f, std::size_t labels, std::size_t mask) {
  if (labels != f.rows || mask != f.rows) {
    throw Error(ErrorCode::LengthMismatch, f.trace_id + ": " + std::to_string(f.rows) + " rows, " +
                                               std::to_string(labels) + " labels, " + std::to_string(mask) +
                                               " mask entries");
  }
  if (f.values.size() != f.rows * f.dim) throw Error(ErrorCode::DimMismatch, f.trace_id + ": matrix size");
}

}  // namespace

LossAndGradient weighted_bce(const ProbeModel& model, const FeatureMatrix& features,
                             std::span<const std::uint8_t> labels, std::span<const std::uint8_t> loss_mask,
                             const ClassWeights& weights) {
  check_shapes(features, labels.size(), loss_mask.size());
  if (features.dim != model.input_dim()) throw Error(ErrorCode::DimMismatch, "feature dim vs model dim");
  const std::size_t active = static_cast<std::size_t>(std::count(loss_mask.begin(), loss_mask.end(), 1));
  if (active == 0) throw Error(ErrorCode::EmptyMask, features.trace_id + ": no masked positions");

  LossAndGradient out;
  out.gradient.assign(model.weights().size(), 0.0);
  const double scale = 1.0 / static_cast<double>(active);
  std::vector<double> x(features.dim);
  double sum = 0.0;
  for (std::size_t r = 0; r < features.rows; ++r) {
    if (!loss_mask[r]) continue;
    const auto row = features.row(r);
    std::copy(row.begin(), row.end(), x.begin());
    sum += token_term(model, x, labels[r], weights, scale, out.gradient);
  }
  out.loss = sum * scale;
  if (!std::isfinite(out.loss)) throw Error(ErrorCode::NonFiniteLoss, features.trace_id);
  return out;
}

double macro_f1(std::span<const std::uint8_t> y_true, std::span<const std::uint8_t> y_pred) {
  if (y_true.size() != y_pred.size() || y_true.empty()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(y_true.size()) + " labels vs " +
                                               std::to_string(y_pred.size()) + " predictions");
  }
  double sum = 0.0;
  for (std::uint8_t c : {std::uint8_t{0}, std::uint8_t{1}}) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      const bool t = (y_true[i] != 0) == (c == 1);
      const bool p = (y_pred[i] != 0) == (c == 1);
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
    }
    if (tp + fp + fn == 0) {
      sum += 1.0;
    } else {
      sum += 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
    }
  }
  return sum / 2.0;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidArgument, "learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::InvalidArgument, "momentum must be in [0, 1)");
  if (batch_size == 0 || max_epochs == 0 || early_stop_patience == 0) {
    throw Error(ErrorCode::InvalidArgument, "batch_size, max_epochs and early_stop_patience must be >= 1");
  }
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "validation_fraction must be in (0, 1)");
  }
  if (!(threshold > 0.0 && threshold < 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold must be in (0, 1)");
  if ((arch == Arch::mlp) == hidden.empty()) {
    throw Error(ErrorCode::InvalidArgument, "hidden widths are required for mlp and not allowed for linear");
  }
}

namespace {

struct TokenRef {
  std::size_t offset;  // into the standardized feature buffer
  std::uint8_t label;
};

struct Split {
  std::vector<double> features;  // standardized, row-major
  std::vector<TokenRef> tokens;
};

Split gather(std::span<const TrainExample> data, std::span<const std::size_t> which,
             std::span<const double> mean, std::span<const double> sd) {
  Split s;
  const std::size_t dim = mean.size();
  for (std::size_t e : which) {
    const auto& ex = data[e];
    for (std::size_t r = 0; r < ex.features.rows; ++r) {
      if (!ex.loss_mask[r]) continue;
      s.tokens.push_back(TokenRef{s.features.size(), ex.labels[r]});
      const auto row = ex.features.row(r);
      for (std::size_t j = 0; j < dim; ++j) s.features.push_back((row[j] - mean[j]) / sd[j]);
    }
  }
  return s;
}

double split_loss(const ProbeModel& model, const Split& s, const ClassWeights& cw) {
  const std::size_t dim = model.input_dim();
  double sum = 0.0;
  for (const auto& t : s.tokens) {
    const std::span<const double> x(s.features.data() + t.offset, dim);
    const double p = std::clamp(model.predict(x), kProbEpsilon, 1.0 - kProbEpsilon);
    sum += t.label ? -cw.w1 * std::log(p) : -cw.w0 * std::log(1.0 - p);
  }
  return sum / static_cast<double>(s.tokens.size());
}

double split_f1(const ProbeModel& model, const Split& s) {
  std::vector<std::uint8_t> truth;
  std::vector<std::uint8_t> pred;
  for (const auto& t : s.tokens) {
    truth.push_back(t.label);
    pred.push_back(model.predict(std::span<const double>(s.features.data() + t.offset, model.input_dim())) >=
                   model.threshold());
  }
  return macro_f1(truth, pred);
}

void fold_standardization(ProbeModel& model, std::span<const double> mean, std::span<const double> sd) {
  const std::size_t in = model.input_dim();
  const std::size_t out = model.hidden().empty() ? 1 : model.hidden().front();
  auto& w = model.weights();
  for (std::size_t o = 0; o < out; ++o) {
    double shift = 0.0;
    for (std::size_t i = 0; i < in; ++i) {
      w[o * in + i] /= sd[i];
      shift += w[o * in + i] * mean[i];
    }
    w[out * in + o] -= shift;
  }
}

}  // namespace

TrainResult train(std::span<const TrainExample> dataset, const TrainConfig& config) {
  config.validate();
  if (dataset.size() < 2) throw Error(ErrorCode::InvalidArgument, "training needs at least 2 traces");
  const std::size_t dim = dataset.front().features.dim;
  for (const auto& ex : dataset) {
    check_shapes(ex.features, ex.labels.size(), ex.loss_mask.size());
    if (ex.features.dim != dim) throw Error(ErrorCode::DimMismatch, ex.features.trace_id + ": feature dim differs");
  }

  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return dataset[a].features.trace_id < dataset[b].features.trace_id;
  });
  Rng rng(config.seed);
  rng.shuffle(order);
  const auto n = order.size();
  const std::size_t n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(config.validation_fraction * static_cast<double>(n))), 1, n - 1);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<long>(n_val));
  std::vector<std::size_t> train_idx(order.begin() + static_cast<long>(n_val), order.end());
  auto by_id = [&](std::size_t a, std::size_t b) {
    return dataset[a].features.trace_id < dataset[b].features.trace_id;
  };
  std::sort(val_idx.begin(), val_idx.end(), by_id);
  std::sort(train_idx.begin(), train_idx.end(), by_id);

  // Standardization statistics from the training split's masked tokens.
  std::vector<double> mean(dim, 0.0), sd(dim, 0.0);
  std::size_t count = 0, n1 = 0;
  for (std::size_t e : train_idx) {
    const auto& ex = dataset[e];
    for (std::size_t r = 0; r < ex.features.rows; ++r) {
      if (!ex.loss_mask[r]) continue;
      ++count;
      n1 += ex.labels[r] != 0;
      const auto row = ex.features.row(r);
      for (std::size_t j = 0; j < dim; ++j) mean[j] += row[j];
    }
  }
  if (count == 0) throw Error(ErrorCode::EmptyMask, "training split has no masked tokens");
  for (double& m : mean) m /= static_cast<double>(count);
  for (std::size_t e : train_idx) {
    const auto& ex = dataset[e];
    for (std::size_t r = 0; r < ex.features.rows; ++r) {
      if (!ex.loss_mask[r]) continue;
      const auto row = ex.features.row(r);
      for (std::size_t j = 0; j < dim; ++j) sd[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
    }
  }
  for (double& s : sd) {
    s = std::sqrt(s / static_cast<double>(count));
    if (!(s > 1e-12)) s = 1.0;
  }

  const ClassWeights cw = class_weights(count - n1, n1);
  const Split train_split = gather(dataset, train_idx, mean, sd);
  const Split val_split = gather(dataset, val_idx, mean, sd);
  if (val_split.tokens.empty()) throw Error(ErrorCode::EmptyMask, "validation split has no masked tokens");

  ProbeModel model(config.arch, dim, config.hidden, config.threshold);
  if (config.arch == Arch::mlp) {
    std::vector<std::size_t> sizes{dim};
    sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
    sizes.push_back(1);
    std::size_t off = 0;
    for (std::size_t l = 1; l < sizes.size(); ++l) {
      const double a = std::sqrt(6.0 / static_cast<double>(sizes[l] + sizes[l - 1]));
      for (std::size_t k = 0; k < sizes[l] * sizes[l - 1]; ++k) model.weights()[off + k] = rng.uniform(-a, a);
      off += sizes[l] * sizes[l - 1] + sizes[l];
    }
  }

  TrainResult result;
  result.report.class_weights = cw;
  result.report.train_traces = train_idx.size();
  result.report.val_traces = val_idx.size();
  result.report.train_tokens = train_split.tokens.size();

  std::vector<double> velocity(model.weights().size(), 0.0);
  std::vector<double> grad(model.weights().size(), 0.0);
  std::vector<std::size_t> token_order(train_split.tokens.size());
  std::iota(token_order.begin(), token_order.end(), 0);
  std::vector<double> best_weights = model.weights();
  double best_f1 = -1.0;
  std::size_t stale = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(token_order);
    for (std::size_t start = 0; start < token_order.size(); start += config.batch_size) {
      const std::size_t stop = std::min(token_order.size(), start + config.batch_size);
      std::fill(grad.begin(), grad.end(), 0.0);
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (std::size_t k = start; k < stop; ++k) {
        const auto& t = train_split.tokens[token_order[k]];
        token_term(model, std::span<const double>(train_split.features.data() + t.offset, dim), t.label, cw, scale,
                   grad);
      }
      auto& w = model.weights();
      for (std::size_t j = 0; j < w.size(); ++j) {
        velocity[j] = config.momentum * velocity[j] - config.learning_rate * grad[j];
        w[j] += velocity[j];
      }
    }
    const double loss = split_loss(model, train_split, cw);
    const bool finite_weights = std::all_of(model.weights().begin(), model.weights().end(),
                                            [](double v) { return std::isfinite(v); });
    if (!std::isfinite(loss) || !finite_weights) throw Error(ErrorCode::Diverged, "non-finite training loss at epoch " + std::to_string(epoch));
    const double f1 = split_f1(model, val_split);
    result.report.epochs.push_back(EpochStats{epoch, loss, f1});
    if (f1 > best_f1) {
      best_f1 = f1;
      best_weights = model.weights();
      result.report.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= config.early_stop_patience) {
      break;
    }
  }

  model.weights() = best_weights;
  fold_standardization(model, mean, sd);
  result.report.best_val_macro_f1 = best_f1;
  result.model = std::move(model);
  return result;
}

// --- features ------------------------------------------------------------

const char* to_string(FeatureKind kind) noexcept { return kind == FeatureKind::sidecar ? "sidecar" : "logprob"; }

FeatureKind feature_kind_from_string(std::string_view s) {
  if (s == "sidecar") return FeatureKind::sidecar;
  if (s == "logprob") return FeatureKind::logprob;
  throw Error(ErrorCode::InvalidArgument, "unknown feature provider '" + std::string(s) + "'");
}

std::vector<float> LogprobFeatures::next(const TokenRecord& record) {
  if (record.top_k.empty()) {
    throw Error(ErrorCode::MissingLogprobs, "token " + std::to_string(record.index) + " has no top-K logprobs");
  }
  const double c = analysis::token_confidence(record);
  const double margin = record.top_k.size() >= 2 ? record.top_k[0].logprob - record.top_k[1].logprob : 0.0;
  ema_ = seen_ ? kConfidenceEmaAlpha * c + (1.0 - kConfidenceEmaAlpha) * ema_ : c;
  seen_ = true;
  return {static_cast<float>(c), static_cast<float>(record.chosen_logprob), static_cast<float>(margin),
          static_cast<float>(ema_)};
}

FeatureMatrix logprob_features(const Trace& trace) {
  FeatureMatrix m;
  m.trace_id = trace.trace_id;
  m.rows = trace.length();
  m.dim = kLogprobFeatureDim;
  m.values.reserve(m.rows * m.dim);
  LogprobFeatures f;
  for (const auto& t : trace.cot_tokens) {
    const auto row = f.next(t);
    m.values.insert(m.values.end(), row.begin(), row.end());
  }
  return m;
}

FeatureMatrix features_for(const Trace& trace, FeatureKind kind, const std::filesystem::path& sidecar_dir) {
  if (kind == FeatureKind::logprob) return logprob_features(trace);
  if (sidecar_dir.empty()) throw Error(ErrorCode::InvalidArgument, "sidecar features need a sidecar directory");
  return attach_features(trace, sidecar_path(sidecar_dir, trace.trace_id));
}

}  // namespace optexit::probe
