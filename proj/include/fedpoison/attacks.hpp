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
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedpoison/aggregation.hpp"
#include "fedpoison/core.hpp"
#include "fedpoison/data.hpp"

namespace fedpoison {

enum class KnowledgeMode { kFull, kPartial };

std::string_view to_string(KnowledgeMode mode) noexcept;
KnowledgeMode parse_knowledge_mode(std::string_view name);

/// What the attacker can see in one iteration.
///
/// Full knowledge holds every before-attack local model together with the
/// compromised marks. Partial knowledge holds only the compromised devices'
/// before-attack models; benign models are never handed to the scope, so a
/// partial attack cannot read them.
class KnowledgeScope {
 public:
  static KnowledgeScope full(LocalModelSet before_attack, ParameterVector w_re);
  static KnowledgeScope partial(std::vector<ParameterVector> compromised_before_attack, ParameterVector w_re);

  [[nodiscard]] KnowledgeMode mode() const noexcept { return mode_; }
  [[nodiscard]] const ParameterVector& w_re() const noexcept { return w_re_; }
  [[nodiscard]] std::size_t dim() const noexcept { return w_re_.dim(); }

  /// Full: all m models. Partial: the c compromised models.
  [[nodiscard]] std::span<const ParameterVector> visible() const noexcept { return visible_.models(); }
  [[nodiscard]] std::vector<ParameterVector> compromised_models() const;
  /// Full mode only; throws ConfigError in partial mode.
  [[nodiscard]] std::vector<ParameterVector> benign_models() const;
  [[nodiscard]] std::size_t num_compromised() const noexcept;
  [[nodiscard]] const LocalModelSet& model_set() const noexcept { return visible_; }

 private:
  KnowledgeScope(KnowledgeMode mode, LocalModelSet visible, ParameterVector w_re);
  KnowledgeMode mode_;
  LocalModelSet visible_;
  ParameterVector w_re_;
};

enum class AttackObjective { kDirectedDeviation, kDeviation };

std::string_view to_string(AttackObjective objective) noexcept;
AttackObjective parse_attack_objective(std::string_view name);

/// Attack hyperparameters.
struct AttackSpec {
  AggregationRule target = AggregationRule::kKrum;
  AttackObjective objective = AttackObjective::kDirectedDeviation;
  double epsilon = 0.01;           // radius of the Krum support-model ball
  double b = 2.0;                  // interval factor for trimmed mean / median
  double lambda_threshold = 1e-5;  // binary search floor
  std::size_t beta = 0;            // trimmed-mean trim count, used by the deviation objective

  void validate() const;
};

/// Per-coordinate mean, population standard deviation, max and min.
struct CoordinateStats {
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<double> max;
  std::vector<double> min;
};

CoordinateStats coordinate_stats(std::span<const ParameterVector> models);

/// Full: sign(before_attack_agg - w_Re). Partial: sign(mean of the compromised
/// models - w_Re). Throws ConfigError if full mode lacks the aggregate.
ParameterVector estimate_direction(const KnowledgeScope& scope,
                                   const std::optional<ParameterVector>& before_attack_agg);

/// Upper bound on lambda for the Krum attack:
///
///   sqrt( min_i sum_{l in N_i} D^2(w_l, w_i) / ((m - 2c - 1) d) )
///     + max_i D(w_i, w_Re) / sqrt(d)
///
/// where i ranges over `candidates`, N_i holds the m-c-2 candidates closest to
/// w_i (itself excluded), m is the total model count the Krum rule sees and c
/// the number of crafted copies among them. Throws ConfigError when
/// m-2c-1 <= 0 or when there are too few candidates for the neighbor sets.
double krum_lambda_upper_bound(std::span<const ParameterVector> candidates, const ParameterVector& w_re,
                               std::size_t m, std::size_t c);

struct KrumAttackResult {
  bool success = false;
  double lambda = 0.0;
  double upper_bound = 0.0;   // bound the search started from, in the final round
  std::size_t copies = 0;     // crafted copies in the final evaluation set
  ParameterVector direction;  // s, s~ or the all-ones vector
  /// Evaluation set of the final round: `copies` replicas of w_1' first,
  /// then the attacker's reference models. Krum parameter = `krum_c`.
  std::vector<ParameterVector> evaluation_set;
  std::size_t krum_c = 0;
  /// w_1' followed by c-1 points sampled in the epsilon-ball around it.
  /// Empty when success is false.
  std::vector<ParameterVector> crafted;
};

/// Crafts `num_crafted` models that make Krum select w_1' = w_Re - lambda*s.
///
/// Full knowledge evaluates lambda against {w_1' x num_crafted} U benign
/// models under Krum with c = krum_c (defaults to num_crafted). Partial
/// knowledge evaluates against {w_1' x k} U compromised before-attack models
/// with Krum parameter k, starting at k = 1 and adding one copy after every
/// failed search, up to num_crafted added copies. lambda starts at the upper
/// bound for the current evaluation set and halves until Krum selects w_1' or
/// lambda drops below spec.lambda_threshold.
KrumAttackResult attack_krum(const KnowledgeScope& scope, const AttackSpec& spec, std::size_t num_crafted,
                             RngStream& rng, std::optional<std::size_t> krum_c = std::nullopt,
                             const std::optional<ParameterVector>& before_attack_agg = std::nullopt);

/// Krum attack reused against Bulyan.
KrumAttackResult attack_bulyan(const KnowledgeScope& scope, const AttackSpec& spec, std::size_t num_crafted,
                               RngStream& rng, std::optional<std::size_t> krum_c = std::nullopt,
                               const std::optional<ParameterVector>& before_attack_agg = std::nullopt);

/// Uniform point in the closed ball of radius epsilon around `center`:
/// uniform direction on the sphere, radius epsilon * u^(1/d).
ParameterVector sample_in_ball(const ParameterVector& center, double epsilon, RngStream& rng);

/// Coordinate-wise crafting against trimmed mean, median and mean.
///
/// Full knowledge, s_j = -1: c samples from [w_max, b w_max] (w_max > 0) or
/// [w_max, w_max / b]; s_j = +1: from [w_min / b, w_min] (w_min > 0) or
/// [b w_min, w_min], with w_max / w_min over the benign models.
/// Partial knowledge: s~_j = -1 samples [mu + 3 sigma, mu + 4 sigma], s~_j = +1
/// samples [mu - 4 sigma, mu - 3 sigma] over the compromised models.
/// The deviation objective (full knowledge only) picks, per coordinate, the
/// side whose interval midpoint moves spec.target's aggregate furthest from
/// its no-attack value; `direction` is ignored in that case.
std::vector<ParameterVector> attack_trimmed_mean(const KnowledgeScope& scope, const AttackSpec& spec,
                                                 std::size_t num_crafted, const ParameterVector& direction,
                                                 RngStream& rng);

/// Same crafting as attack_trimmed_mean.
std::vector<ParameterVector> attack_median(const KnowledgeScope& scope, const AttackSpec& spec,
                                           std::size_t num_crafted, const ParameterVector& direction,
                                           RngStream& rng);

/// Fits N(mu_j, sigma_j) per coordinate over all before-attack models and
/// draws one model per compromised device.
std::vector<ParameterVector> attack_gaussian(std::span<const ParameterVector> all_before_attack,
                                             std::size_t num_crafted, RngStream& rng);

/// Label l becomes L - l - 1; features are untouched.
int flip_label(int label, int num_classes);
Dataset flip_labels(const Dataset& shard);

}  // namespace fedpoison
