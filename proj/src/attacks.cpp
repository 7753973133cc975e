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

#include "fedpoison/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace fedpoison {

std::string_view to_string(KnowledgeMode mode) noexcept {
  return mode == KnowledgeMode::kFull ? "full" : "partial";
}

KnowledgeMode parse_knowledge_mode(std::string_view name) {
  if (name == "full") return KnowledgeMode::kFull;
  if (name == "partial") return KnowledgeMode::kPartial;
  throw ConfigError("unknown knowledge mode '" + std::string(name) + "'");
}

std::string_view to_string(AttackObjective objective) noexcept {
  return objective == AttackObjective::kDirectedDeviation ? "directed" : "deviation";
}

AttackObjective parse_attack_objective(std::string_view name) {
  if (name == "directed" || name == "directed_deviation") return AttackObjective::kDirectedDeviation;
  if (name == "deviation") return AttackObjective::kDeviation;
  throw ConfigError("unknown attack objective '" + std::string(name) + "'");
}

void AttackSpec::validate() const {
  if (!(epsilon > 0.0)) throw ConfigError("attack: epsilon must be positive");
  if (!(b > 1.0)) throw ConfigError("attack: b must exceed 1");
  if (!(lambda_threshold > 0.0)) throw ConfigError("attack: lambda threshold must be positive");
}

// ---------------------------------------------------------------------------
// KnowledgeScope

KnowledgeScope::KnowledgeScope(KnowledgeMode mode, LocalModelSet visible, ParameterVector w_re)
    : mode_(mode), visible_(std::move(visible)), w_re_(std::move(w_re)) {
  if (visible_.size() > 0 && visible_.dim() != w_re_.dim()) {
    throw DimensionError("KnowledgeScope: w_Re dimension differs from the local models");
  }
}

KnowledgeScope KnowledgeScope::full(LocalModelSet before_attack, ParameterVector w_re) {
  return KnowledgeScope(KnowledgeMode::kFull, std::move(before_attack), std::move(w_re));
}

KnowledgeScope KnowledgeScope::partial(std::vector<ParameterVector> compromised_before_attack,
                                       ParameterVector w_re) {
  // Only compromised models ever enter a partial scope, so they are stored
  // unmarked: every visible model is a compromised one.
  return KnowledgeScope(KnowledgeMode::kPartial, LocalModelSet(std::move(compromised_before_attack)),
                        std::move(w_re));
}

std::vector<ParameterVector> KnowledgeScope::compromised_models() const {
  if (mode_ == KnowledgeMode::kPartial) {
    return {visible_.models().begin(), visible_.models().end()};
  }
  return visible_.compromised_models();
}

std::vector<ParameterVector> KnowledgeScope::benign_models() const {
  if (mode_ == KnowledgeMode::kPartial) {
    throw ConfigError("KnowledgeScope: benign models are not visible with partial knowledge");
  }
  return visible_.benign_models();
}

std::size_t KnowledgeScope::num_compromised() const noexcept {
  return mode_ == KnowledgeMode::kPartial ? visible_.size() : visible_.compromised().size();
}

// ---------------------------------------------------------------------------
// Statistics and direction

CoordinateStats coordinate_stats(std::span<const ParameterVector> models) {
  const std::size_t d = common_dim(models, "coordinate_stats");
  const double n = static_cast<double>(models.size());
  CoordinateStats s;
  s.mean.assign(d, 0.0);
  s.stddev.assign(d, 0.0);
  s.max.assign(d, -std::numeric_limits<double>::infinity());
  s.min.assign(d, std::numeric_limits<double>::infinity());
  for (const auto& w : models) {
    for (std::size_t j = 0; j < d; ++j) {
      s.mean[j] += w[j];
      s.max[j] = std::max(s.max[j], w[j]);
      s.min[j] = std::min(s.min[j], w[j]);
    }
  }
  for (double& v : s.mean) v /= n;
  for (const auto& w : models) {
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = w[j] - s.mean[j];
      s.stddev[j] += diff * diff;
    }
  }
  for (std::size_t j = 0; j < d; ++j) {
    s.stddev[j] = std::sqrt(s.stddev[j] / n);
    // The summed mean can land an ulp outside [min, max] when all values agree.
    s.mean[j] = std::clamp(s.mean[j], s.min[j], s.max[j]);
  }
  return s;
}

ParameterVector estimate_direction(const KnowledgeScope& scope,
                                   const std::optional<ParameterVector>& before_attack_agg) {
  if (scope.mode() == KnowledgeMode::kFull) {
    if (!before_attack_agg) {
      throw ConfigError("estimate_direction: full knowledge needs the no-attack aggregate");
    }
    return signed_direction(*before_attack_agg, scope.w_re());
  }
  const auto compromised = scope.compromised_models();
  if (compromised.empty()) {
    throw ConfigError("estimate_direction: partial knowledge needs the compromised models");
  }
  return signed_direction(mean(compromised), scope.w_re());
}

// ---------------------------------------------------------------------------
// Krum attack

namespace {

// General form of the lambda bound. `neighbors` is the Krum neighbor count
// and `free_neighbors` the number of those neighbors of w_1' that are not
// crafted copies.
double lambda_bound(std::span<const ParameterVector> candidates, const ParameterVector& w_re,
                    std::size_t neighbors, std::size_t free_neighbors) {
  const std::size_t d = common_dim(candidates, "krum_lambda_upper_bound");
  require_same_dim(candidates.front(), w_re, "krum_lambda_upper_bound");
  if (free_neighbors == 0) throw ConfigError("krum_lambda_upper_bound: needs m-2c-1 > 0");
  if (neighbors + 1 > candidates.size()) {
    throw ConfigError("krum_lambda_upper_bound: too few candidates for the neighbor sets");
  }
  const std::size_t n = candidates.size();
  const auto dist = pairwise_squared_distances(candidates);
  const auto sums = krum_scores_from_distances(dist, n, neighbors);
  const double min_sum = *std::min_element(sums.begin(), sums.end());
  double max_dist = 0.0;
  for (const auto& w : candidates) max_dist = std::max(max_dist, euclidean_distance(w, w_re));
  const double dd = static_cast<double>(d);
  return std::sqrt(min_sum / (static_cast<double>(free_neighbors) * dd)) + max_dist / std::sqrt(dd);
}

// Evaluates "does Krum select w_1'?" on {w_1' x copies} U refs without
// rebuilding the full distance matrix for every lambda. Scores are summed in
// ascending order, exactly as krum() does on the materialized set, so the
// answer agrees with krum() bit for bit.
class KrumEvaluator {
 public:
  KrumEvaluator(std::span<const ParameterVector> refs, std::size_t copies, std::size_t krum_c)
      : refs_(refs), copies_(copies), krum_c_(krum_c) {
    const std::size_t n = refs.size();
    const std::size_t total = n + copies;
    AggregatorSpec::krum(krum_c).validate(total);
    neighbors_ = total - krum_c - 2;
    const auto dist = pairwise_squared_distances(refs);
    rows_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < n; ++k) {
        if (k != i) rows_[i].push_back(dist[i * n + k]);
      }
      std::sort(rows_[i].begin(), rows_[i].end());
    }
  }

  bool selects(const ParameterVector& candidate) {
    const std::size_t n = refs_.size();
    delta_.resize(n);
    for (std::size_t i = 0; i < n; ++i) delta_[i] = squared_distance(candidate, refs_[i]);

    // Candidate copy: copies-1 zero distances, then the nearest refs.
    scratch_.assign(copies_ - 1, 0.0);
    scratch_.insert(scratch_.end(), delta_.begin(), delta_.end());
    std::sort(scratch_.begin(), scratch_.end());
    double own = 0.0;
    for (std::size_t k = 0; k < neighbors_; ++k) own += scratch_[k];

    for (std::size_t i = 0; i < n; ++i) {
      // Merge the sorted ref row with `copies` entries equal to delta_i.
      double acc = 0.0;
      std::size_t taken = 0;
      std::size_t r = 0;
      std::size_t used_copies = 0;
      const auto& row = rows_[i];
      while (taken < neighbors_) {
        const bool take_copy =
            used_copies < copies_ && (r >= row.size() || delta_[i] <= row[r]);
        if (take_copy) {
          acc += delta_[i];
          ++used_copies;
        } else {
          acc += row[r++];
        }
        ++taken;
      }
      // Copies sit at lower indices than every ref, so they win ties.
      if (acc < own) return false;
    }
    return true;
  }

 private:
  std::span<const ParameterVector> refs_;
  std::size_t copies_;
  std::size_t krum_c_;
  std::size_t neighbors_ = 0;
  std::vector<std::vector<double>> rows_;
  std::vector<double> delta_;
  std::vector<double> scratch_;
};

ParameterVector craft_w1(const ParameterVector& w_re, const ParameterVector& direction, double lambda) {
  ParameterVector w(w_re.dim());
  for (std::size_t j = 0; j < w.dim(); ++j) w[j] = w_re[j] - lambda * direction[j];
  return w;
}

struct SearchOutcome {
  bool success = false;
  double lambda = 0.0;
};

SearchOutcome binary_search_lambda(KrumEvaluator& evaluator, const ParameterVector& w_re,
                                   const ParameterVector& direction, double start, double threshold) {
  double lambda = start;
  while (lambda >= threshold) {
    if (evaluator.selects(craft_w1(w_re, direction, lambda))) return {true, lambda};
    lambda *= 0.5;
  }
  return {false, lambda};
}

std::vector<ParameterVector> build_evaluation_set(const ParameterVector& w1, std::size_t copies,
                                                  std::span<const ParameterVector> refs) {
  std::vector<ParameterVector> out(copies, w1);
  out.insert(out.end(), refs.begin(), refs.end());
  return out;
}

}  // namespace

double krum_lambda_upper_bound(std::span<const ParameterVector> candidates, const ParameterVector& w_re,
                               std::size_t m, std::size_t c) {
  if (m < 2 * c + 2) throw ConfigError("krum_lambda_upper_bound: needs m-2c-1 > 0");
  return lambda_bound(candidates, w_re, m - c - 2, m - 2 * c - 1);
}

ParameterVector sample_in_ball(const ParameterVector& center, double epsilon, RngStream& rng) {
  const std::size_t d = center.dim();
  ParameterVector dir(d);
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      dir[j] = rng.normal();
      norm2 += dir[j] * dir[j];
    }
  } while (norm2 == 0.0);
  const double radius = epsilon * std::pow(rng.uniform(), 1.0 / static_cast<double>(d));
  const double scale = radius / std::sqrt(norm2);
  ParameterVector out = center;
  for (std::size_t j = 0; j < d; ++j) out[j] += scale * dir[j];
  return out;
}

KrumAttackResult attack_krum(const KnowledgeScope& scope, const AttackSpec& spec, std::size_t num_crafted,
                             RngStream& rng, std::optional<std::size_t> krum_c,
                             const std::optional<ParameterVector>& before_attack_agg) {
  spec.validate();
  if (num_crafted == 0) throw ConfigError("attack_krum: nothing to craft");
  const auto& w_re = scope.w_re();
  const std::size_t d = w_re.dim();

  KrumAttackResult result;
  if (spec.objective == AttackObjective::kDeviation) {
    result.direction = ParameterVector(d, 1.0);
  } else if (scope.mode() == KnowledgeMode::kFull) {
    const std::size_t kc = krum_c.value_or(num_crafted);
    const auto agg = before_attack_agg ? *before_attack_agg : krum(scope.visible(), kc).model;
    result.direction = estimate_direction(scope, agg);
  } else {
    result.direction = estimate_direction(scope, std::nullopt);
  }

  if (scope.mode() == KnowledgeMode::kFull) {
    const auto refs = scope.benign_models();
    const std::size_t copies = num_crafted;
    const std::size_t kc = krum_c.value_or(num_crafted);
    const std::size_t total = copies + refs.size();
    AggregatorSpec::krum(kc).validate(total);
    const std::size_t neighbors = total - kc - 2;
    const std::size_t free_neighbors = neighbors + 1 > copies ? neighbors + 1 - copies : 0;
    result.upper_bound = lambda_bound(refs, w_re, neighbors, std::max<std::size_t>(free_neighbors, 1));
    KrumEvaluator evaluator(refs, copies, kc);
    const auto outcome =
        binary_search_lambda(evaluator, w_re, result.direction, result.upper_bound, spec.lambda_threshold);
    result.success = outcome.success;
    result.lambda = outcome.lambda;
    result.copies = copies;
    result.krum_c = kc;
    result.evaluation_set = build_evaluation_set(craft_w1(w_re, result.direction, outcome.lambda), copies, refs);
  } else {
    const auto refs = scope.compromised_models();
    const std::size_t c = refs.size();
    if (c < 3) throw ConfigError("attack_krum: partial knowledge needs at least 3 compromised models");
    // Round k evaluates {w_1' x k} U refs with Krum parameter k; k-1 copies
    // have been added after failed rounds, at most num_crafted of them.
    for (std::size_t k = 1; k <= num_crafted + 1; ++k) {
      // Neighbor count is c-2 in every round; the bound's free-neighbor count
      // c-k-1 is kept positive by capping k at c-2.
      const std::size_t k_bound = std::min(k, c - 2);
      result.upper_bound = lambda_bound(refs, w_re, c - 2, c - k_bound - 1);
      KrumEvaluator evaluator(refs, k, k);
      const auto outcome =
          binary_search_lambda(evaluator, w_re, result.direction, result.upper_bound, spec.lambda_threshold);
      result.success = outcome.success;
      result.lambda = outcome.lambda;
      result.copies = k;
      result.krum_c = k;
      if (outcome.success || k == num_crafted + 1) {
        result.evaluation_set = build_evaluation_set(craft_w1(w_re, result.direction, outcome.lambda), k, refs);
        break;
      }
    }
  }

  if (!result.success) return result;
  const ParameterVector w1 = craft_w1(w_re, result.direction, result.lambda);
  result.crafted.reserve(num_crafted);
  result.crafted.push_back(w1);
  for (std::size_t i = 1; i < num_crafted; ++i) result.crafted.push_back(sample_in_ball(w1, spec.epsilon, rng));
  return result;
}

KrumAttackResult attack_bulyan(const KnowledgeScope& scope, const AttackSpec& spec, std::size_t num_crafted,
                               RngStream& rng, std::optional<std::size_t> krum_c,
                               const std::optional<ParameterVector>& before_attack_agg) {
  return attack_krum(scope, spec, num_crafted, rng, krum_c, before_attack_agg);
}

// ---------------------------------------------------------------------------
// Trimmed mean / median attack

namespace {

struct Interval {
  double lo;
  double hi;
};

// Interval above the benign maximum (used when the parameter should grow).
Interval above_max(double w_max, double b) {
  return w_max > 0.0 ? Interval{w_max, b * w_max} : Interval{w_max, w_max / b};
}

// Interval below the benign minimum.
Interval below_min(double w_min, double b) {
  return w_min > 0.0 ? Interval{w_min / b, w_min} : Interval{b * w_min, w_min};
}

double aggregate_scalar(AggregationRule rule, std::size_t beta, std::vector<double>& values) {
  switch (rule) {
    case AggregationRule::kMedian: return median_of(values);
    case AggregationRule::kMean:
      return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
    case AggregationRule::kTrimmedMean: {
      if (2 * beta >= values.size()) throw ConfigError("attack: trimmed-mean beta too large for the model set");
      std::sort(values.begin(), values.end());
      double acc = 0.0;
      for (std::size_t k = beta; k < values.size() - beta; ++k) acc += values[k];
      return acc / static_cast<double>(values.size() - 2 * beta);
    }
    default: throw ConfigError("attack: coordinate-wise crafting targets mean, trimmed mean or median");
  }
}

}  // namespace

std::vector<ParameterVector> attack_trimmed_mean(const KnowledgeScope& scope, const AttackSpec& spec,
                                                 std::size_t num_crafted, const ParameterVector& direction,
                                                 RngStream& rng) {
  spec.validate();
  if (spec.target != AggregationRule::kTrimmedMean && spec.target != AggregationRule::kMedian &&
      spec.target != AggregationRule::kMean) {
    throw ConfigError("attack_trimmed_mean: target must be trimmed mean, median or mean");
  }
  const std::size_t d = scope.dim();
  const bool deviation = spec.objective == AttackObjective::kDeviation;
  if (!deviation) require_same_dim(direction, scope.w_re(), "attack_trimmed_mean");
  if (deviation && scope.mode() != KnowledgeMode::kFull) {
    throw ConfigError("attack_trimmed_mean: the deviation objective needs full knowledge");
  }

  std::vector<Interval> intervals(d);
  if (scope.mode() == KnowledgeMode::kFull) {
    const auto benign = scope.benign_models();
    const auto stats = coordinate_stats(benign);
    std::vector<double> column;
    for (std::size_t j = 0; j < d; ++j) {
      const Interval up = above_max(stats.max[j], spec.b);
      const Interval down = below_min(stats.min[j], spec.b);
      if (!deviation) {
        intervals[j] = direction[j] < 0.0 ? up : down;
        continue;
      }
      // Deviation objective: simulate the target rule with every crafted
      // value at each interval's midpoint and keep the larger displacement.
      column.clear();
      for (const auto& w : scope.visible()) column.push_back(w[j]);
      const double base = aggregate_scalar(spec.target, spec.beta, column);
      auto displaced = [&](const Interval& iv) {
        column.clear();
        for (const auto& w : benign) column.push_back(w[j]);
        column.insert(column.end(), num_crafted, 0.5 * (iv.lo + iv.hi));
        return std::abs(aggregate_scalar(spec.target, spec.beta, column) - base);
      };
      intervals[j] = displaced(up) >= displaced(down) ? up : down;
    }
  } else {
    const auto stats = coordinate_stats(scope.compromised_models());
    for (std::size_t j = 0; j < d; ++j) {
      const double mu = stats.mean[j];
      const double sigma = stats.stddev[j];
      intervals[j] = direction[j] < 0.0 ? Interval{mu + 3.0 * sigma, mu + 4.0 * sigma}
                                        : Interval{mu - 4.0 * sigma, mu - 3.0 * sigma};
    }
  }

  std::vector<ParameterVector> crafted(num_crafted, ParameterVector(d));
  for (auto& w : crafted) {
    for (std::size_t j = 0; j < d; ++j) w[j] = rng.uniform(intervals[j].lo, intervals[j].hi);
  }
  return crafted;
}

std::vector<ParameterVector> attack_median(const KnowledgeScope& scope, const AttackSpec& spec,
                                           std::size_t num_crafted, const ParameterVector& direction,
                                           RngStream& rng) {
  return attack_trimmed_mean(scope, spec, num_crafted, direction, rng);
}

std::vector<ParameterVector> attack_gaussian(std::span<const ParameterVector> all_before_attack,
                                             std::size_t num_crafted, RngStream& rng) {
  const auto stats = coordinate_stats(all_before_attack);
  const std::size_t d = stats.mean.size();
  std::vector<ParameterVector> crafted(num_crafted, ParameterVector(d));
  for (auto& w : crafted) {
    for (std::size_t j = 0; j < d; ++j) w[j] = rng.normal(stats.mean[j], stats.stddev[j]);
  }
  return crafted;
}

int flip_label(int label, int num_classes) { return num_classes - label - 1; }

Dataset flip_labels(const Dataset& shard) {
  std::vector<int> labels = shard.labels();
  for (int& l : labels) l = flip_label(l, shard.num_classes());
  return shard.with_labels(std::move(labels));
}

}  // namespace fedpoison
