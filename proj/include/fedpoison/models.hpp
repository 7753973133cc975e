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

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedpoison/core.hpp"
#include "fedpoison/data.hpp"

namespace fedpoison {

enum class ModelKind { kLogisticRegression, kMlp };

/// Classifier shape. Parameters are one flat vector:
///   LR : W (L x q, row-major), b (L)                    -> (q+1)*L
///   MLP: W1 (h x q), b1 (h), W2 (L x h), b2 (L)          -> (q+1)*h + (h+1)*L
/// The MLP hidden layer uses ReLU.
struct ModelSpec {
  ModelKind kind = ModelKind::kLogisticRegression;
  std::size_t input_dim = 0;
  std::size_t num_classes = 0;
  std::size_t hidden = 0;

  [[nodiscard]] std::size_t param_count() const noexcept;
  void validate() const;

  static ModelSpec logistic(std::size_t q, std::size_t L) { return {ModelKind::kLogisticRegression, q, L, 0}; }
  static ModelSpec mlp(std::size_t q, std::size_t h, std::size_t L) { return {ModelKind::kMlp, q, L, h}; }
};

/// Probabilities are clamped to this floor before taking logs.
inline constexpr double kProbabilityFloor = 1e-12;

/// LR starts from zeros. The MLP draws W1 ~ N(0, 2/q) and W2 ~ N(0, 1/h)
/// with zero biases.
ParameterVector init_params(const ModelSpec& spec, RngStream& rng);

/// Raw class scores for one feature row.
std::vector<double> logits(const ModelSpec& spec, const ParameterVector& params,
                           std::span<const double> features);

/// Softmax over logits; shift-invariant and sums to one.
std::vector<double> predict_proba(const ModelSpec& spec, const ParameterVector& params,
                                  std::span<const double> features);

/// Index of the largest score; ties go to the lowest class index.
std::size_t predict_class(const ModelSpec& spec, const ParameterVector& params,
                          std::span<const double> features);

/// F(w, D_i): mean cross-entropy over a shard of a dataset.
class Objective {
 public:
  /// Shard = every row of `data`.
  Objective(const Dataset& data, ModelSpec spec);
  Objective(const Dataset& data, std::vector<std::size_t> shard, ModelSpec spec);

  [[nodiscard]] const Dataset& data() const noexcept { return *data_; }
  [[nodiscard]] const ModelSpec& spec() const noexcept { return spec_; }
  [[nodiscard]] std::span<const std::size_t> shard() const noexcept { return shard_; }

 private:
  const Dataset* data_;
  std::vector<std::size_t> shard_;
  ModelSpec spec_;
};

double loss(const Objective& objective, const ParameterVector& params);

/// Mean cross-entropy over the whole dataset.
double dataset_loss(const ModelSpec& spec, const ParameterVector& params, const Dataset& data);

/// Analytic gradient of the mean batch cross-entropy. When `batch_loss` is
/// non-null it receives the (clamped) mean batch loss at `params`.
ParameterVector gradient(const Objective& objective, const ParameterVector& params, const Batch& batch,
                         double* batch_loss = nullptr);

struct LocalUpdateResult {
  ParameterVector model;
  /// Mean batch loss observed in the first SGD round, i.e. at w_global.
  double first_batch_loss = 0.0;
};

/// R rounds of SGD from w_global, each on a fresh batch of size B drawn from
/// the objective's shard.
LocalUpdateResult local_update(const Objective& objective, const ParameterVector& w_global, double alpha,
                               std::size_t rounds, std::size_t batch_size, RngStream& rng);

/// Fraction of rows whose predicted class differs from the label.
double error_rate(const ModelSpec& spec, const ParameterVector& params, const Dataset& data);

/// Error rate and mean cross-entropy in one pass.
struct Evaluation {
  double error = 0.0;
  double loss = 0.0;
};
Evaluation evaluate(const ModelSpec& spec, const ParameterVector& params, const Dataset& data);

}  // namespace fedpoison
