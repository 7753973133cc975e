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
#include <string>
#include <string_view>
#include <vector>

#include "fedpoison/core.hpp"

namespace fedpoison {

enum class AggregationRule { kMean, kKrum, kTrimmedMean, kMedian, kBulyan };

std::string_view to_string(AggregationRule rule) noexcept;
AggregationRule parse_aggregation_rule(std::string_view name);

/// Which rule the master applies and its robustness parameters.
///  - c: assumed number of compromised devices (Krum, Bulyan).
///  - beta: values trimmed from each end per coordinate (TrimmedMean).
///  - theta, gamma: Bulyan's Krum selections and per-coordinate kept values.
struct AggregatorSpec {
  AggregationRule rule = AggregationRule::kMean;
  std::size_t c = 0;
  std::size_t beta = 0;
  std::size_t theta = 0;
  std::size_t gamma = 0;

  /// Throws ConfigError if the rule cannot run on m models.
  void validate(std::size_t m) const;
  /// Smallest model count the rule accepts with these parameters.
  [[nodiscard]] std::size_t min_models() const noexcept;

  static AggregatorSpec mean() { return {AggregationRule::kMean}; }
  static AggregatorSpec krum(std::size_t c) { return {AggregationRule::kKrum, c}; }
  static AggregatorSpec trimmed_mean(std::size_t beta) { return {AggregationRule::kTrimmedMean, 0, beta}; }
  static AggregatorSpec median() { return {AggregationRule::kMedian}; }
  static AggregatorSpec bulyan(std::size_t c, std::size_t theta, std::size_t gamma) {
    return {AggregationRule::kBulyan, c, 0, theta, gamma};
  }
};

ParameterVector mean(std::span<const ParameterVector> models);

/// Symmetric m x m matrix of squared Euclidean distances, row-major.
std::vector<double> pairwise_squared_distances(std::span<const ParameterVector> models);

/// Sum of the `neighbors` smallest off-diagonal entries of each row.
std::vector<double> krum_scores_from_distances(std::span<const double> sq_dist, std::size_t m,
                                               std::size_t neighbors);

/// score_i = sum of squared distances from model i to its m-c-2 nearest
/// other models. Requires m >= c+3.
std::vector<double> krum_scores(std::span<const ParameterVector> models, std::size_t c);

struct KrumSelection {
  std::size_t index = 0;
  ParameterVector model;
};

/// Model with the smallest Krum score; ties go to the lowest index.
KrumSelection krum(std::span<const ParameterVector> models, std::size_t c);

/// Per coordinate: drop the beta largest and beta smallest values, average
/// the rest. Requires beta < m/2.
ParameterVector trimmed_mean(std::span<const ParameterVector> models, std::size_t beta);

/// Coordinate-wise median; an even count averages the two middle values.
ParameterVector median(std::span<const ParameterVector> models);

/// Median of a scalar sample with the same even/odd convention. Reorders
/// `values`.
double median_of(std::span<double> values);

/// Bulyan: select theta models by repeated Krum (each round removes the
/// winner), then per coordinate average the gamma selected values closest to
/// their median. The inner Krum on s remaining models uses max(s-c-2, 0)
/// neighbors. In the per-coordinate step, equal distances to the median keep
/// the lower device index first.
ParameterVector bulyan(std::span<const ParameterVector> models, std::size_t c, std::size_t theta,
                       std::size_t gamma);

/// Indices (into `models`) of the theta models Bulyan selects, in selection
/// order.
std::vector<std::size_t> bulyan_selection(std::span<const ParameterVector> models, std::size_t c,
                                          std::size_t theta);

/// Dispatches on spec.rule after validating the spec against models.size().
ParameterVector aggregate(const AggregatorSpec& spec, std::span<const ParameterVector> models);

/// Aggregates of every leave-one-out subset: result[i] = aggregate(models
/// without i). Mean, Krum, TrimmedMean and Median use shared sorted/distance
/// state; Bulyan recomputes each subset.
std::vector<ParameterVector> leave_one_out_aggregates(const AggregatorSpec& spec,
                                                      std::span<const ParameterVector> models);

}  // namespace fedpoison
