// Copyright 2026 The fedpoison Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "fedpoison/models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

namespace fedpoison {

std::size_t ModelSpec::param_count() const noexcept {
  if (kind == ModelKind::kLogisticRegression) return (input_dim + 1) * num_classes;
  return (input_dim + 1) * hidden + (hidden + 1) * num_classes;
}

void ModelSpec::validate() const {
  if (input_dim == 0) throw ConfigError("ModelSpec: input dimension must be positive");
  if (num_classes < 2) throw ConfigError("ModelSpec: need at least two classes");
  if (kind == ModelKind::kMlp && hidden == 0) throw ConfigError("ModelSpec: MLP needs a hidden width");
}

namespace {

void require_params(const ModelSpec& spec, const ParameterVector& params, std::size_t q) {
  if (params.dim() != spec.param_count()) {
    throw DimensionError("model parameters have dimension " + std::to_string(params.dim()) +
                         ", spec expects " + std::to_string(spec.param_count()));
  }
  if (q != spec.input_dim) {
    throw DimensionError("feature row has " + std::to_string(q) + " entries, spec expects " +
                         std::to_string(spec.input_dim));
  }
}

// Four independent partial sums break the add dependency chain; the
// summation order is fixed, so results stay deterministic.
inline double dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t j = 0; j < n; ++j) y[j] += alpha * x[j];
}

// Feature rows are mostly zeros for image data; input-layer products only
// visit the non-zero columns.
inline double sparse_dot(const double* w, const double* x, std::span<const std::uint32_t> nz) {
  double s0 = 0.0, s1 = 0.0;
  std::size_t k = 0;
  for (; k + 2 <= nz.size(); k += 2) {
    s0 += w[nz[k]] * x[nz[k]];
    s1 += w[nz[k + 1]] * x[nz[k + 1]];
  }
  if (k < nz.size()) s0 += w[nz[k]] * x[nz[k]];
  return s0 + s1;
}

inline void sparse_axpy(double alpha, const double* x, std::span<const std::uint32_t> nz, double* y) {
  for (std::uint32_t j : nz) y[j] += alpha * x[j];
}

std::vector<std::uint32_t> nonzero_columns(std::span<const double> x) {
  std::vector<std::uint32_t> nz;
  for (std::size_t j = 0; j < x.size(); ++j) {
    if (x[j] != 0.0) nz.push_back(static_cast<std::uint32_t>(j));
  }
  return nz;
}

void softmax_in_place(std::vector<double>& z) {
  const double top = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (double& v : z) {
    v = std::exp(v - top);
    sum += v;
  }
  for (double& v : z) v /= sum;
}

// Forward pass with intermediate activations kept for backprop. For LR the
// hidden vectors stay empty.
struct Forward {
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
  std::vector<double> probs;
};

void forward(const ModelSpec& spec, const double* w, std::span<const double> x, std::span<const std::uint32_t> nz,
             Forward& f) {
  const std::size_t q = spec.input_dim;
  const std::size_t L = spec.num_classes;
  f.probs.assign(L, 0.0);
  if (spec.kind == ModelKind::kLogisticRegression) {
    const double* bias = w + L * q;
    for (std::size_t k = 0; k < L; ++k) f.probs[k] = sparse_dot(w + k * q, x.data(), nz) + bias[k];
    return;
  }
  const std::size_t h = spec.hidden;
  const double* w1 = w;
  const double* b1 = w1 + h * q;
  const double* w2 = b1 + h;
  const double* b2 = w2 + L * h;
  f.hidden_pre.resize(h);
  f.hidden.resize(h);
  for (std::size_t u = 0; u < h; ++u) {
    f.hidden_pre[u] = sparse_dot(w1 + u * q, x.data(), nz) + b1[u];
    f.hidden[u] = std::max(0.0, f.hidden_pre[u]);
  }
  for (std::size_t k = 0; k < L; ++k) f.probs[k] = dot(w2 + k * h, f.hidden.data(), h) + b2[k];
}

double clamped_nll(const std::vector<double>& probs, int label) {
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbabilityFloor));
}

}  // namespace

ParameterVector init_params(const ModelSpec& spec, RngStream& rng) {
  spec.validate();
  ParameterVector w(spec.param_count(), 0.0);
  if (spec.kind == ModelKind::kMlp) {
    const std::size_t q = spec.input_dim;
    const std::size_t h = spec.hidden;
    const std::size_t L = spec.num_classes;
    const double s1 = std::sqrt(2.0 / static_cast<double>(q));
    const double s2 = std::sqrt(1.0 / static_cast<double>(h));
    for (std::size_t k = 0; k < h * q; ++k) w[k] = rng.normal(0.0, s1);
    const std::size_t w2_off = h * q + h;
    for (std::size_t k = 0; k < L * h; ++k) w[w2_off + k] = rng.normal(0.0, s2);
  }
  return w;
}

std::vector<double> logits(const ModelSpec& spec, const ParameterVector& params,
                           std::span<const double> features) {
  require_params(spec, params, features.size());
  Forward f;
  forward(spec, params.values().data(), features, nonzero_columns(features), f);
  return f.probs;
}

std::vector<double> predict_proba(const ModelSpec& spec, const ParameterVector& params,
                                  std::span<const double> features) {
  auto z = logits(spec, params, features);
  softmax_in_place(z);
  return z;
}

std::size_t predict_class(const ModelSpec& spec, const ParameterVector& params,
                          std::span<const double> features) {
  const auto z = logits(spec, params, features);
  // max_element returns the first maximum, i.e. the lowest class index.
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

Objective::Objective(const Dataset& data, ModelSpec spec) : data_(&data), spec_(spec) {
  shard_.resize(data.size());
  std::iota(shard_.begin(), shard_.end(), std::size_t{0});
}

Objective::Objective(const Dataset& data, std::vector<std::size_t> shard, ModelSpec spec)
    : data_(&data), shard_(std::move(shard)), spec_(spec) {
  for (std::size_t i : shard_) {
    if (i >= data.size()) throw ConfigError("Objective: shard index out of range");
  }
}

double loss(const Objective& objective, const ParameterVector& params) {
  if (objective.shard().empty()) throw ConfigError("loss: empty shard");
  const auto& spec = objective.spec();
  const auto& data = objective.data();
  require_params(spec, params, data.num_features());
  Forward f;
  double total = 0.0;
  for (std::size_t i : objective.shard()) {
    forward(spec, params.values().data(), data.row(i), data.nonzero(i), f);
    softmax_in_place(f.probs);
    total += clamped_nll(f.probs, data.label(i));
  }
  return total / static_cast<double>(objective.shard().size());
}

double dataset_loss(const ModelSpec& spec, const ParameterVector& params, const Dataset& data) {
  return evaluate(spec, params, data).loss;
}

ParameterVector gradient(const Objective& objective, const ParameterVector& params, const Batch& batch,
                         double* batch_loss) {
  if (batch.indices.empty()) throw ConfigError("gradient: empty batch");
  const auto& spec = objective.spec();
  const auto& data = objective.data();
  require_params(spec, params, data.num_features());

  const std::size_t q = spec.input_dim;
  const std::size_t L = spec.num_classes;
  const std::size_t h = spec.hidden;
  const double* w = params.values().data();
  ParameterVector grad(params.dim(), 0.0);
  double* g = grad.values().data();

  Forward f;
  std::vector<double> delta_hidden(h);
  double total_loss = 0.0;
  for (std::size_t i : batch.indices) {
    const auto x = data.row(i);
    const auto y = static_cast<std::size_t>(data.label(i));
    const auto nz = data.nonzero(i);
    forward(spec, w, x, nz, f);
    softmax_in_place(f.probs);
    total_loss += clamped_nll(f.probs, static_cast<int>(y));
    // dLoss/dlogit = p - onehot(y)
    f.probs[y] -= 1.0;
    const auto& delta = f.probs;

    if (spec.kind == ModelKind::kLogisticRegression) {
      double* gb = g + L * q;
      for (std::size_t k = 0; k < L; ++k) {
        sparse_axpy(delta[k], x.data(), nz, g + k * q);
        gb[k] += delta[k];
      }
      continue;
    }
    const double* w2 = w + h * q + h;
    double* gw1 = g;
    double* gb1 = gw1 + h * q;
    double* gw2 = gb1 + h;
    double* gb2 = gw2 + L * h;
    std::fill(delta_hidden.begin(), delta_hidden.end(), 0.0);
    for (std::size_t k = 0; k < L; ++k) {
      axpy(delta[k], f.hidden.data(), gw2 + k * h, h);
      gb2[k] += delta[k];
      axpy(delta[k], w2 + k * h, delta_hidden.data(), h);
    }
    for (std::size_t u = 0; u < h; ++u) {
      if (f.hidden_pre[u] <= 0.0) continue;
      sparse_axpy(delta_hidden[u], x.data(), nz, gw1 + u * q);
      gb1[u] += delta_hidden[u];
    }
  }
  const double inv = 1.0 / static_cast<double>(batch.indices.size());
  grad *= inv;
  if (batch_loss != nullptr) *batch_loss = total_loss * inv;
  return grad;
}

LocalUpdateResult local_update(const Objective& objective, const ParameterVector& w_global, double alpha,
                               std::size_t rounds, std::size_t batch_size, RngStream& rng) {
  if (!(alpha >= 0.0)) throw ConfigError("local_update: learning rate must be non-negative");
  if (rounds == 0) throw ConfigError("local_update: need at least one round");
  if (objective.shard().empty()) throw ConfigError("local_update: empty shard");
  LocalUpdateResult out{w_global, 0.0};
  for (std::size_t r = 0; r < rounds; ++r) {
    const Batch batch = sample_batch(objective.shard(), batch_size, rng);
    double batch_loss = 0.0;
    const ParameterVector g = gradient(objective, out.model, batch, &batch_loss);
    if (r == 0) out.first_batch_loss = batch_loss;
    double* w = out.model.values().data();
    const double* gp = g.values().data();
    for (std::size_t j = 0; j < g.dim(); ++j) w[j] -= alpha * gp[j];
  }
  return out;
}

Evaluation evaluate(const ModelSpec& spec, const ParameterVector& params, const Dataset& data) {
  if (data.empty()) throw ConfigError("evaluate: empty dataset");
  require_params(spec, params, data.num_features());
  Forward f;
  std::size_t wrong = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    forward(spec, params.values().data(), data.row(i), data.nonzero(i), f);
    const auto best = static_cast<std::size_t>(std::max_element(f.probs.begin(), f.probs.end()) - f.probs.begin());
    if (best != static_cast<std::size_t>(data.label(i))) ++wrong;
    softmax_in_place(f.probs);
    total += clamped_nll(f.probs, data.label(i));
  }
  const double n = static_cast<double>(data.size());
  return {static_cast<double>(wrong) / n, total / n};
}

double error_rate(const ModelSpec& spec, const ParameterVector& params, const Dataset& data) {
  if (data.empty()) throw ConfigError("error_rate: empty dataset");
  require_params(spec, params, data.num_features());
  Forward f;
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    forward(spec, params.values().data(), data.row(i), data.nonzero(i), f);
    const auto best = static_cast<std::size_t>(std::max_element(f.probs.begin(), f.probs.end()) - f.probs.begin());
    if (best != static_cast<std::size_t>(data.label(i))) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

}  // namespace fedpoison
