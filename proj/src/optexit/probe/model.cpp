// Copyright 2026 The OptExit Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <sstream>

#include "optexit/common/error.hpp"
#include "optexit/common/util.hpp"
#include "optexit/probe/probe.hpp"

namespace optexit::probe {

const char* to_string(Arch arch) noexcept { return arch == Arch::linear ? "linear" : "mlp"; }

Arch arch_from_string(std::string_view s) {
  if (s == "linear") return Arch::linear;
  if (s == "mlp") return Arch::mlp;
  throw Error(ErrorCode::InvalidArgument, "unknown architecture '" + std::string(s) + "'");
}

double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

namespace {

std::vector<std::size_t> layer_sizes(std::size_t input_dim, std::span<const std::size_t> hidden) {
  std::vector<std::size_t> sizes{input_dim};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(1);
  return sizes;
}

}  // namespace

ProbeModel::ProbeModel(Arch arch, std::size_t input_dim, std::vector<std::size_t> hidden, double threshold)
    : arch_(arch), input_dim_(input_dim), hidden_(std::move(hidden)), threshold_(threshold) {
  if (input_dim_ == 0) throw Error(ErrorCode::InvalidArgument, "input dimension must be >= 1");
  if (arch_ == Arch::linear && !hidden_.empty()) {
    throw Error(ErrorCode::InvalidArgument, "linear probe takes no hidden layers");
  }
  if (arch_ == Arch::mlp && hidden_.empty()) throw Error(ErrorCode::InvalidArgument, "mlp probe needs hidden widths");
  for (std::size_t h : hidden_) {
    if (h == 0) throw Error(ErrorCode::InvalidArgument, "hidden width must be >= 1");
  }
  set_threshold(threshold);
  weights_.assign(weight_count(arch_, input_dim_, hidden_), 0.0);
}

std::size_t ProbeModel::weight_count(Arch arch, std::size_t input_dim, std::span<const std::size_t> hidden) {
  (void)arch;
  const auto sizes = layer_sizes(input_dim, hidden);
  std::size_t n = 0;
  for (std::size_t l = 1; l < sizes.size(); ++l) n += sizes[l] * sizes[l - 1] + sizes[l];
  return n;
}

void ProbeModel::set_threshold(double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw Error(ErrorCode::InvalidArgument, "threshold must be in (0, 1)");
  threshold_ = tau;
}

void ProbeModel::validate() const {
  if (weights_.size() != weight_count(arch_, input_dim_, hidden_)) {
    throw Error(ErrorCode::DimMismatch, "weight count " + std::to_string(weights_.size()) + " does not match " +
                                            std::to_string(weight_count(arch_, input_dim_, hidden_)));
  }
}

double ProbeModel::logit(std::span<const float> x) const {
  std::vector<double> xd(x.begin(), x.end());
  return logit(std::span<const double>(xd));
}

double ProbeModel::logit(std::span<const double> x) const {
  if (x.size() != input_dim_) {
    throw Error(ErrorCode::DimMismatch,
                "feature dim " + std::to_string(x.size()) + " vs model dim " + std::to_string(input_dim_));
  }
  const auto sizes = layer_sizes(input_dim_, hidden_);
  std::vector<double> a(x.begin(), x.end());
  std::vector<double> z;
  std::size_t off = 0;
  for (std::size_t l = 1; l < sizes.size(); ++l) {
    const std::size_t in = sizes[l - 1];
    const std::size_t out = sizes[l];
    const double* w = weights_.data() + off;
    const double* b = w + out * in;
    z.assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * a[i];
      z[o] = l + 1 < sizes.size() ? std::tanh(s) : s;
    }
    off += out * in + out;
    a.swap(z);
  }
  return a[0];
}

double ProbeModel::predict(std::span<const double> x) const { return sigmoid(logit(x)); }
double ProbeModel::predict(std::span<const float> x) const { return sigmoid(logit(x)); }

double ProbeModel::logit_and_gradient(std::span<const double> x, double scale, std::span<double> grad) const {
  if (x.size() != input_dim_) throw Error(ErrorCode::DimMismatch, "feature dim mismatch");
  if (grad.size() != weights_.size()) throw Error(ErrorCode::DimMismatch, "gradient buffer size mismatch");
  const auto sizes = layer_sizes(input_dim_, hidden_);
  const std::size_t layers = sizes.size() - 1;
  std::vector<std::vector<double>> acts(sizes.size());
  std::vector<std::size_t> offsets(layers);
  acts[0].assign(x.begin(), x.end());
  std::size_t off = 0;
  for (std::size_t l = 1; l <= layers; ++l) {
    const std::size_t in = sizes[l - 1];
    const std::size_t out = sizes[l];
    offsets[l - 1] = off;
    const double* w = weights_.data() + off;
    const double* b = w + out * in;
    acts[l].assign(out, 0.0);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += w[o * in + i] * acts[l - 1][i];
      acts[l][o] = l < layers ? std::tanh(s) : s;
    }
    off += out * in + out;
  }

  std::vector<double> delta{scale};
  for (std::size_t l = layers; l >= 1; --l) {
    const std::size_t in = sizes[l - 1];
    const std::size_t out = sizes[l];
    const double* w = weights_.data() + offsets[l - 1];
    double* gw = grad.data() + offsets[l - 1];
    double* gb = gw + out * in;
    const auto& a_prev = acts[l - 1];
    for (std::size_t o = 0; o < out; ++o) {
      for (std::size_t i = 0; i < in; ++i) gw[o * in + i] += delta[o] * a_prev[i];
      gb[o] += delta[o];
    }
    if (l == 1) break;
    std::vector<double> prev(in, 0.0);
    for (std::size_t i = 0; i < in; ++i) {
      double s = 0.0;
      for (std::size_t o = 0; o < out; ++o) s += w[o * in + i] * delta[o];
      prev[i] = s * (1.0 - a_prev[i] * a_prev[i]);
    }
    delta.swap(prev);
  }
  return acts[layers][0];
}

// --- OPXM ----------------------------------------------------------------

std::string serialize_model(const ProbeModel& model) {
  model.validate();
  std::ostringstream os(std::ios::binary);
  os.write(kModelMagic, 4);
  write_u32le(os, kModelVersion);
  write_u8(os, static_cast<std::uint8_t>(model.arch()));
  write_u32le(os, static_cast<std::uint32_t>(model.input_dim()));
  write_u32le(os, static_cast<std::uint32_t>(model.hidden().size()));
  for (std::size_t h : model.hidden()) write_u32le(os, static_cast<std::uint32_t>(h));
  write_f64le(os, model.threshold());
  for (double w : model.weights()) write_f64le(os, w);
  return std::move(os).str();
}

ProbeModel parse_model(std::string_view bytes) {
  std::istringstream is{std::string(bytes), std::ios::binary};
  char magic[4] = {};
  if (!is.read(magic, 4) || std::memcmp(magic, kModelMagic, 4) != 0) {
    throw Error(ErrorCode::BadMagic, "not an OPXM model file");
  }
  auto truncated = [] { return SchemaError(0, "model", "truncated model file"); };
  std::uint32_t version = 0;
  if (!read_u32le(is, version)) throw truncated();
  if (version != kModelVersion) {
    throw Error(ErrorCode::VersionMismatch, "model version " + std::to_string(version) + ", expected " +
                                                std::to_string(kModelVersion));
  }
  std::uint8_t arch = 0;
  std::uint32_t dim = 0;
  std::uint32_t n_hidden = 0;
  if (!read_u8(is, arch) || !read_u32le(is, dim) || !read_u32le(is, n_hidden)) throw truncated();
  if (arch > 1) throw SchemaError(0, "arch", "unknown architecture tag " + std::to_string(arch));
  if (n_hidden > 64) throw SchemaError(0, "hidden", "implausible hidden layer count");
  std::vector<std::size_t> hidden(n_hidden);
  for (auto& h : hidden) {
    std::uint32_t v = 0;
    if (!read_u32le(is, v)) throw truncated();
    h = v;
  }
  double tau = 0.0;
  if (!read_f64le(is, tau)) throw truncated();
  ProbeModel model(static_cast<Arch>(arch), dim, std::move(hidden), tau);
  for (double& w : model.weights()) {
    if (!read_f64le(is, w)) throw truncated();
  }
  if (is.peek() != std::char_traits<char>::eof()) throw SchemaError(0, "model", "trailing bytes after weights");
  return model;
}

void save_model(const std::filesystem::path& path, const ProbeModel& model) {
  write_file(path, serialize_model(model));
}

ProbeModel load_model(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::MissingFile, path.string());
  return parse_model(read_file(path));
}

}  // namespace optexit::probe
