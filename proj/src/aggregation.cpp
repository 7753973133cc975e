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

#include "fedpoison/aggregation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace fedpoison {

std::string_view to_string(AggregationRule rule) noexcept {
  switch (rule) {
    case AggregationRule::kMean: return "mean";
    case AggregationRule::kKrum: return "krum";
    case AggregationRule::kTrimmedMean: return "trimmed_mean";
    case AggregationRule::kMedian: return "median";
    case AggregationRule::kBulyan: return "bulyan";
  }
  return "unknown";
}

AggregationRule parse_aggregation_rule(std::string_view name) {
  if (name == "mean") return AggregationRule::kMean;
  if (name == "krum") return AggregationRule::kKrum;
  if (name == "trimmed_mean" || name == "trim" || name == "trimmedmean") return AggregationRule::kTrimmedMean;
  if (name == "median") return AggregationRule::kMedian;
  if (name == "bulyan") return AggregationRule::kBulyan;
  throw ConfigError("unknown aggregation rule '" + std::string(name) + "'");
}

std::size_t AggregatorSpec::min_models() const noexcept {
  switch (rule) {
    case AggregationRule::kMean:
    case AggregationRule::kMedian: return 1;
    case AggregationRule::kKrum: return c + 3;
    case AggregationRule::kTrimmedMean: return 2 * beta + 1;
    case AggregationRule::kBulyan: return theta + 2 * c;
  }
  return 1;
}

void AggregatorSpec::validate(std::size_t m) const {
  const std::string name(to_string(rule));
  if (m == 0) throw ConfigError(name + ": empty model set");
  switch (rule) {
    case AggregationRule::kMean:
    case AggregationRule::kMedian: return;
    case AggregationRule::kKrum:
      if (m < c + 3) {
        throw ConfigError("krum: needs m >= c+3 (m=" + std::to_string(m) + ", c=" + std::to_string(c) + ")");
      }
      return;
    case AggregationRule::kTrimmedMean:
      if (2 * beta >= m) {
        throw ConfigError("trimmed_mean: needs beta < m/2 (m=" + std::to_string(m) +
                          ", beta=" + std::to_string(beta) + ")");
      }
      if (c > beta) throw ConfigError("trimmed_mean: needs c <= beta");
      return;
    case AggregationRule::kBulyan:
      if (theta == 0 || gamma == 0) throw ConfigError("bulyan: theta and gamma must be positive");
      if (theta + 2 * c > m) throw ConfigError("bulyan: needs theta <= m-2c");
      if (gamma + 2 * c > theta) throw ConfigError("bulyan: needs gamma <= theta-2c");
      return;
  }
}

ParameterVector mean(std::span<const ParameterVector> models) {
  const std::size_t d = common_dim(models, "mean");
  ParameterVector out(d, 0.0);
  double* acc = out.values().data();
  for (const auto& w : models) {
    const double* p = w.values().data();
    for (std::size_t j = 0; j < d; ++j) acc[j] += p[j];
  }
  out *= 1.0 / static_cast<double>(models.size());
  return out;
}

std::vector<double> pairwise_squared_distances(std::span<const ParameterVector> models) {
  const std::size_t m = models.size();
  if (m == 0) return {};
  const std::size_t d = common_dim(models, "pairwise_squared_distances");
  // Blocked over coordinates so a block of every model stays in cache. Each
  // pair keeps the same four lane sums as squared_distance, fed in the same
  // coordinate order, so the entries equal squared_distance bit for bit.
  constexpr std::size_t kBlock = 512;
  const std::size_t body = d - d % 4;
  std::vector<double> lanes(m * m * 4, 0.0);
  for (std::size_t start = 0; start < body; start += kBlock) {
    const std::size_t stop = std::min(body, start + kBlock);
    for (std::size_t i = 0; i < m; ++i) {
      const double* pa = models[i].values().data();
      for (std::size_t k = i + 1; k < m; ++k) {
        const double* pb = models[k].values().data();
        double* s = &lanes[(i * m + k) * 4];
        double s0 = s[0], s1 = s[1], s2 = s[2], s3 = s[3];
        for (std::size_t j = start; j < stop; j += 4) {
          const double d0 = pa[j] - pb[j];
          const double d1 = pa[j + 1] - pb[j + 1];
          const double d2 = pa[j + 2] - pb[j + 2];
          const double d3 = pa[j + 3] - pb[j + 3];
          s0 += d0 * d0;
          s1 += d1 * d1;
          s2 += d2 * d2;
          s3 += d3 * d3;
        }
        s[0] = s0;
        s[1] = s1;
        s[2] = s2;
        s[3] = s3;
      }
    }
  }
  std::vector<double> dist(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* pa = models[i].values().data();
    for (std::size_t k = i + 1; k < m; ++k) {
      const double* pb = models[k].values().data();
      double* s = &lanes[(i * m + k) * 4];
      for (std::size_t j = body; j < d; ++j) {
        const double diff = pa[j] - pb[j];
        s[0] += diff * diff;
      }
      const double v = (s[0] + s[1]) + (s[2] + s[3]);
      dist[i * m + k] = v;
      dist[k * m + i] = v;
    }
  }
  return dist;
}

namespace {

// Sum of the `neighbors` smallest entries of row i, skipping the diagonal and
// any index in `excluded` (a sorted list). Values are summed in ascending
// order so that every caller sees identical rounding.
double neighbor_sum(std::span<const double> sq_dist, std::size_t m, std::size_t i,
                    std::span<const std::size_t> candidates, std::size_t neighbors,
                    std::vector<double>& scratch) {
  scratch.clear();
  for (std::size_t k : candidates) {
    if (k != i) scratch.push_back(sq_dist[i * m + k]);
  }
  if (neighbors > scratch.size()) {
    throw ConfigError("krum: not enough models for the neighbor count");
  }
  std::sort(scratch.begin(), scratch.end());
  double acc = 0.0;
  for (std::size_t k = 0; k < neighbors; ++k) acc += scratch[k];
  return acc;
}

std::size_t argmin_lowest(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] < scores[best]) best = i;
  }
  return best;
}

}  // namespace

std::vector<double> krum_scores_from_distances(std::span<const double> sq_dist, std::size_t m,
                                               std::size_t neighbors) {
  if (sq_dist.size() != m * m) throw DimensionError("krum_scores_from_distances: matrix is not m x m");
  std::vector<std::size_t> all(m);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<double> scores(m);
  std::vector<double> scratch;
  scratch.reserve(m);
  for (std::size_t i = 0; i < m; ++i) scores[i] = neighbor_sum(sq_dist, m, i, all, neighbors, scratch);
  return scores;
}

std::vector<double> krum_scores(std::span<const ParameterVector> models, std::size_t c) {
  common_dim(models, "krum");
  AggregatorSpec::krum(c).validate(models.size());
  const std::size_t m = models.size();
  return krum_scores_from_distances(pairwise_squared_distances(models), m, m - c - 2);
}

KrumSelection krum(std::span<const ParameterVector> models, std::size_t c) {
  const auto scores = krum_scores(models, c);
  const std::size_t best = argmin_lowest(scores);
  return {best, models[best]};
}

double median_of(std::span<double> values) {
  if (values.empty()) throw ConfigError("median: empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

namespace {

// Copies coordinates [start, start + count) of every model into a
// coordinate-major block: block[(j - start) * m + i] = models[i][j].
void gather_block(std::span<const ParameterVector> models, std::size_t start, std::size_t count,
                  std::vector<double>& block) {
  const std::size_t m = models.size();
  block.resize(count * m);
  for (std::size_t i = 0; i < m; ++i) {
    const double* p = models[i].values().data() + start;
    for (std::size_t j = 0; j < count; ++j) block[j * m + i] = p[j];
  }
}

constexpr std::size_t kColumnBlock = 256;

}  // namespace

ParameterVector trimmed_mean(std::span<const ParameterVector> models, std::size_t beta) {
  const std::size_t d = common_dim(models, "trimmed_mean");
  const std::size_t m = models.size();
  if (2 * beta >= m) throw ConfigError("trimmed_mean: needs beta < m/2");
  ParameterVector out(d);
  std::vector<double> block;
  const double kept = static_cast<double>(m - 2 * beta);
  for (std::size_t start = 0; start < d; start += kColumnBlock) {
    const std::size_t count = std::min(kColumnBlock, d - start);
    gather_block(models, start, count, block);
    for (std::size_t j = 0; j < count; ++j) {
      const auto first = block.begin() + static_cast<std::ptrdiff_t>(j * m);
      const auto lo = first + static_cast<std::ptrdiff_t>(beta);
      const auto hi = first + static_cast<std::ptrdiff_t>(m - beta);
      // Partition so [lo, hi) holds exactly the kept order statistics.
      if (beta > 0) {
        std::nth_element(first, lo, first + static_cast<std::ptrdiff_t>(m));
        std::nth_element(lo, hi - 1, first + static_cast<std::ptrdiff_t>(m));
      }
      double acc = 0.0;
      for (auto it = lo; it != hi; ++it) acc += *it;
      out[start + j] = acc / kept;
    }
  }
  return out;
}

ParameterVector median(std::span<const ParameterVector> models) {
  const std::size_t d = common_dim(models, "median");
  const std::size_t m = models.size();
  ParameterVector out(d);
  std::vector<double> block;
  for (std::size_t start = 0; start < d; start += kColumnBlock) {
    const std::size_t count = std::min(kColumnBlock, d - start);
    gather_block(models, start, count, block);
    for (std::size_t j = 0; j < count; ++j) {
      const auto first = block.begin() + static_cast<std::ptrdiff_t>(j * m);
      const auto mid = first + static_cast<std::ptrdiff_t>(m / 2);
      std::nth_element(first, mid, first + static_cast<std::ptrdiff_t>(m));
      if (m % 2 == 1) {
        out[start + j] = *mid;
      } else {
        out[start + j] = 0.5 * (*std::max_element(first, mid) + *mid);
      }
    }
  }
  return out;
}

std::vector<std::size_t> bulyan_selection(std::span<const ParameterVector> models, std::size_t c,
                                          std::size_t theta) {
  const std::size_t m = models.size();
  common_dim(models, "bulyan");
  if (theta == 0 || theta > m) throw ConfigError("bulyan: theta out of range");
  const auto dist = pairwise_squared_distances(models);
  std::vector<std::size_t> remaining(m);
  std::iota(remaining.begin(), remaining.end(), std::size_t{0});
  std::vector<std::size_t> selected;
  selected.reserve(theta);
  std::vector<double> scratch;
  while (selected.size() < theta) {
    const std::size_t s = remaining.size();
    const std::size_t neighbors = s >= c + 2 ? s - c - 2 : 0;
    std::size_t best_pos = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t pos = 0; pos < s; ++pos) {
      const double score = neighbor_sum(dist, m, remaining[pos], remaining, neighbors, scratch);
      if (score < best_score) {
        best_score = score;
        best_pos = pos;
      }
    }
    selected.push_back(remaining[best_pos]);
    remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(best_pos));
  }
  return selected;
}

ParameterVector bulyan(std::span<const ParameterVector> models, std::size_t c, std::size_t theta,
                       std::size_t gamma) {
  const std::size_t d = common_dim(models, "bulyan");
  AggregatorSpec::bulyan(c, theta, gamma).validate(models.size());
  // Per-coordinate ties on distance go to the lower device index.
  auto selected = bulyan_selection(models, c, theta);
  std::sort(selected.begin(), selected.end());

  ParameterVector out(d);
  std::vector<double> column(theta);
  std::vector<double> sorted(theta);
  std::vector<std::size_t> order(theta);
  std::vector<double> gap(theta);
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t k = 0; k < theta; ++k) column[k] = models[selected[k]][j];
    sorted = column;
    const double med = median_of(sorted);
    for (std::size_t k = 0; k < theta; ++k) gap[k] = std::abs(column[k] - med);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return gap[a] < gap[b]; });
    double acc = 0.0;
    for (std::size_t k = 0; k < gamma; ++k) acc += column[order[k]];
    out[j] = acc / static_cast<double>(gamma);
  }
  return out;
}

ParameterVector aggregate(const AggregatorSpec& spec, std::span<const ParameterVector> models) {
  common_dim(models, to_string(spec.rule));
  spec.validate(models.size());
  switch (spec.rule) {
    case AggregationRule::kMean: return mean(models);
    case AggregationRule::kKrum: return krum(models, spec.c).model;
    case AggregationRule::kTrimmedMean: return trimmed_mean(models, spec.beta);
    case AggregationRule::kMedian: return median(models);
    case AggregationRule::kBulyan: return bulyan(models, spec.c, spec.theta, spec.gamma);
  }
  throw ConfigError("aggregate: unknown rule");
}

// ---------------------------------------------------------------------------
// Leave-one-out aggregates

namespace {

std::vector<ParameterVector> loo_generic(const AggregatorSpec& spec, std::span<const ParameterVector> models) {
  const std::size_t m = models.size();
  std::vector<ParameterVector> out;
  out.reserve(m);
  std::vector<ParameterVector> rest;
  rest.reserve(m - 1);
  for (std::size_t e = 0; e < m; ++e) {
    rest.clear();
    for (std::size_t i = 0; i < m; ++i) {
      if (i != e) rest.push_back(models[i]);
    }
    out.push_back(aggregate(spec, rest));
  }
  return out;
}

std::vector<ParameterVector> loo_mean(std::span<const ParameterVector> models, std::size_t d) {
  const std::size_t m = models.size();
  ParameterVector total(d, 0.0);
  for (const auto& w : models) total += w;
  std::vector<ParameterVector> out;
  out.reserve(m);
  const double inv = 1.0 / static_cast<double>(m - 1);
  for (std::size_t e = 0; e < m; ++e) {
    ParameterVector v = total - models[e];
    v *= inv;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<ParameterVector> loo_krum(std::span<const ParameterVector> models, std::size_t c) {
  const std::size_t m = models.size();
  const auto dist = pairwise_squared_distances(models);
  const std::size_t neighbors = (m - 1) - c - 2;
  // Each row sorted ascending once; dropping one column keeps the order, so
  // the neighbor sums below match a direct Krum on the reduced set bit for bit.
  std::vector<std::vector<std::pair<double, std::size_t>>> rows(m);
  for (std::size_t i = 0; i < m; ++i) {
    rows[i].reserve(m - 1);
    for (std::size_t k = 0; k < m; ++k) {
      if (k != i) rows[i].emplace_back(dist[i * m + k], k);
    }
    std::sort(rows[i].begin(), rows[i].end());
  }
  std::vector<ParameterVector> out;
  out.reserve(m);
  for (std::size_t e = 0; e < m; ++e) {
    std::size_t best = m;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      if (i == e) continue;
      double acc = 0.0;
      std::size_t taken = 0;
      for (const auto& [v, k] : rows[i]) {
        if (taken == neighbors) break;
        if (k == e) continue;
        acc += v;
        ++taken;
      }
      if (acc < best_score) {
        best_score = acc;
        best = i;
      }
    }
    out.push_back(models[best]);
  }
  return out;
}

// Coordinate-wise rules. For each coordinate the m values are sorted once;
// removing the value at sorted position r leaves the sorted sequence with
// position r skipped. Any position inside a run of equal values yields the
// same sequence, so r is canonicalized to the end of its run.
std::vector<ParameterVector> loo_coordinatewise(std::span<const ParameterVector> models, std::size_t d,
                                                bool is_median, std::size_t beta) {
  const std::size_t m = models.size();
  const std::size_t n = m - 1;
  std::vector<ParameterVector> out(m, ParameterVector(d));
  std::vector<std::pair<double, std::size_t>> column(m);
  std::vector<double> sorted(m);
  std::vector<std::size_t> rank(m);
  std::vector<std::size_t> run_end(m);

  const std::size_t lo = beta;          // kept reduced positions [lo, hi]
  const std::size_t hi = n - 1 - beta;
  const double kept = static_cast<double>(n - 2 * beta);

  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < m; ++i) column[i] = {models[i][j], i};
    std::sort(column.begin(), column.end());
    for (std::size_t p = 0; p < m; ++p) {
      sorted[p] = column[p].first;
      rank[column[p].second] = p;
    }
    run_end[m - 1] = m - 1;
    for (std::size_t p = m - 1; p-- > 0;) run_end[p] = sorted[p] == sorted[p + 1] ? run_end[p + 1] : p;

    if (is_median) {
      for (std::size_t e = 0; e < m; ++e) {
        const std::size_t r = rank[e];
        auto at = [&](std::size_t k) { return sorted[k < r ? k : k + 1]; };
        out[e][j] = n % 2 == 1 ? at(n / 2) : 0.5 * (at(n / 2 - 1) + at(n / 2));
      }
      continue;
    }
    double s_low = 0.0;   // removed position above the kept window
    double s_high = 0.0;  // removed position at or below its start
    double s_mid = 0.0;
    for (std::size_t k = lo; k <= hi; ++k) s_low += sorted[k];
    for (std::size_t k = lo + 1; k <= hi + 1; ++k) s_high += sorted[k];
    for (std::size_t k = lo; k <= hi + 1; ++k) s_mid += sorted[k];
    for (std::size_t e = 0; e < m; ++e) {
      const std::size_t r = run_end[rank[e]];
      double sum;
      if (r > hi) {
        sum = s_low;
      } else if (r <= lo) {
        sum = s_high;
      } else {
        sum = s_mid - sorted[r];
      }
      out[e][j] = sum / kept;
    }
  }
  return out;
}

}  // namespace

std::vector<ParameterVector> leave_one_out_aggregates(const AggregatorSpec& spec,
                                                      std::span<const ParameterVector> models) {
  const std::size_t d = common_dim(models, "leave_one_out_aggregates");
  const std::size_t m = models.size();
  if (m < 2) throw ConfigError("leave_one_out_aggregates: need at least two models");
  spec.validate(m - 1);
  switch (spec.rule) {
    case AggregationRule::kMean: return loo_mean(models, d);
    case AggregationRule::kKrum: return loo_krum(models, spec.c);
    case AggregationRule::kTrimmedMean: return loo_coordinatewise(models, d, false, spec.beta);
    case AggregationRule::kMedian: return loo_coordinatewise(models, d, true, 0);
    case AggregationRule::kBulyan: return loo_generic(spec, models);
  }
  return loo_generic(spec, models);
}

}  // namespace fedpoison
