// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "optexit/trace/trace.hpp"

namespace optexit::probe {

enum class Arch : std::uint8_t { linear = 0, mlp = 1 };

const char* to_string(Arch arch) noexcept;
Arch arch_from_string(std::string_view s);

/// Per-token binary classifier. Layers are dense, tanh on hidden layers,
/// logistic output. Weights are stored layer by layer as W (out x in,
/// row-major) followed by b.
class ProbeModel {
 public:
  ProbeModel() = default;
  /// Zero-initialized. hidden must be empty for linear and non-empty for mlp.
  ProbeModel(Arch arch, std::size_t input_dim, std::vector<std::size_t> hidden = {}, double threshold = 0.7);

  static std::size_t weight_count(Arch arch, std::size_t input_dim, std::span<const std::size_t> hidden);

  Arch arch() const noexcept { return arch_; }
  std::size_t input_dim() const noexcept { return input_dim_; }
  const std::vector<std::size_t>& hidden() const noexcept { return hidden_; }
  double threshold() const noexcept { return threshold_; }
  void set_threshold(double tau);

  std::vector<double>& weights() noexcept { return weights_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  /// Pre-activation of the output unit. Throws DimMismatch.
  double logit(std::span<const double> x) const;
  double logit(std::span<const float> x) const;
  /// Logistic output in (0, 1).
  double predict(std::span<const double> x) const;
  double predict(std::span<const float> x) const;

  /// Returns the logit and adds scale * d(logit)/d(weights) into grad.
  double logit_and_gradient(std::span<const double> x, double scale, std::span<double> grad) const;

  /// Throws on a weight count that does not match the architecture.
  void validate() const;

  bool operator==(const ProbeModel&) const = default;

 private:
  Arch arch_ = Arch::linear;
  std::size_t input_dim_ = 0;
  std::vector<std::size_t> hidden_;
  double threshold_ = 0.7;
  std::vector<double> weights_;
};

double sigmoid(double z) noexcept;

struct ClassWeights {
  double w0 = 1.0;
  double w1 = 1.0;
};

/// Inverse-frequency weights. Throws MissingClass when either count is 0.
ClassWeights class_weights(std::size_t n0, std::size_t n1);

inline constexpr double kProbEpsilon = 1e-12;

struct LossAndGradient {
  double loss = 0.0;
  std::vector<double> gradient;
};

/// Class-weighted BCE averaged over masked positions, with the exact
/// gradient. Throws EmptyMask, NonFiniteLoss, DimMismatch, LengthMismatch.
LossAndGradient weighted_bce(const ProbeModel& model, const FeatureMatrix& features,
                             std::span<const std::uint8_t> labels, std::span<const std::uint8_t> loss_mask,
                             const ClassWeights& weights);

/// Throws LengthMismatch (including empty inputs).
double macro_f1(std::span<const std::uint8_t> y_true, std::span<const std::uint8_t> y_pred);

struct TrainExample {
  FeatureMatrix features;
  std::vector<std::uint8_t> labels;
  std::vector<std::uint8_t> loss_mask;
};

struct TrainConfig {
  Arch arch = Arch::linear;
  std::vector<std::size_t> hidden;
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 256;
  std::size_t max_epochs = 200;
  std::size_t early_stop_patience = 20;
  double validation_fraction = 0.2;
  std::uint64_t seed = 7;
  double threshold = 0.7;

  void validate() const;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_macro_f1 = 0.0;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::size_t best_epoch = 0;
  double best_val_macro_f1 = 0.0;
  ClassWeights class_weights;
  std::size_t train_traces = 0;
  std::size_t val_traces = 0;
  std::size_t train_tokens = 0;
};

struct TrainResult {
  ProbeModel model;
  TrainReport report;
};

/// Mini-batch SGD with momentum on standardized features. The split is by
/// trace and seeded; the best validation checkpoint is returned with the
/// standardization folded into its first layer. Throws Diverged,
/// MissingClass, InvalidArgument.
TrainResult train(std::span<const TrainExample> dataset, const TrainConfig& config);

// --- model file (OPXM) -------------------------------------------------

inline constexpr char kModelMagic[4] = {'O', 'P', 'X', 'M'};
inline constexpr std::uint32_t kModelVersion = 1;

std::string serialize_model(const ProbeModel& model);
ProbeModel parse_model(std::string_view bytes);
void save_model(const std::filesystem::path& path, const ProbeModel& model);
ProbeModel load_model(const std::filesystem::path& path);

// --- feature providers -------------------------------------------------

enum class FeatureKind { sidecar, logprob };

const char* to_string(FeatureKind kind) noexcept;
FeatureKind feature_kind_from_string(std::string_view s);

inline constexpr std::size_t kLogprobFeatureDim = 4;
inline constexpr double kConfidenceEmaAlpha = 0.1;

/// Online logprob features: [Token-Confidence, chosen logprob, top1 - top2
/// margin, EMA of Token-Confidence].
class LogprobFeatures {
 public:
  void reset() { seen_ = false; }
  /// Throws MissingLogprobs when the record carries no top-K slice.
  std::vector<float> next(const TokenRecord& record);

 private:
  bool seen_ = false;
  double ema_ = 0.0;
};

FeatureMatrix logprob_features(const Trace& trace);

/// Offline features for one trace. sidecar_dir is required for `sidecar`.
FeatureMatrix features_for(const Trace& trace, FeatureKind kind, const std::filesystem::path& sidecar_dir);

}  // namespace optexit::probe
