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

#include <algorithm>
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fedpoison/aggregation.hpp"
#include "support/oracles.hpp"

using namespace fedpoison;

namespace {

std::vector<ParameterVector> scalars(std::initializer_list<double> values) {
  std::vector<ParameterVector> out;
  for (double v : values) out.push_back(ParameterVector{v});
  return out;
}

// Small integers make ties common, which exercises every tie rule.
std::vector<ParameterVector> random_models(std::size_t m, std::size_t d, RngStream& rng, bool integer) {
  std::vector<ParameterVector> out;
  for (std::size_t i = 0; i < m; ++i) {
    ParameterVector w(d);
    for (auto& v : w) v = integer ? static_cast<double>(rng.uniform_index(4)) : rng.normal();
    out.push_back(w);
  }
  return out;
}

std::vector<std::size_t> random_permutation(std::size_t n, RngStream& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.uniform_index(i)]);
  return p;
}

}  // namespace

TEST_CASE("mean examples") {
  CHECK(mean(scalars({1, 2, 27}))[0] == 10.0);
  const ParameterVector v{1.5, -2.0};
  CHECK(mean(std::vector<ParameterVector>(4, v)) == v);
  CHECK_THROWS_AS(mean(std::vector<ParameterVector>{}), ConfigError);
  CHECK_THROWS_AS(mean(std::vector<ParameterVector>{ParameterVector{1.0}, ParameterVector{1.0, 2.0}}),
                  DimensionError);
}

TEST_CASE("krum examples") {
  const auto models = scalars({0, 0.1, 0.2, 0.3, 10});
  const auto scores = krum_scores(models, 1);
  const std::vector<double> expect{0.05, 0.02, 0.02, 0.05, 190.13};
  for (std::size_t i = 0; i < 5; ++i) CHECK(scores[i] == doctest::Approx(expect[i]).epsilon(1e-12));
  // In exact arithmetic devices 1 and 2 tie; with decimal inputs rounding
  // decides, so only membership in the tied pair is asserted here.
  const auto sel = krum(models, 1);
  CHECK((sel.index == 1 || sel.index == 2));
  CHECK(sel.model == models[sel.index]);

  // Dyadic inputs keep the tie exact, and the lower index wins.
  const auto exact = scalars({0, 0.125, 0.25, 0.375, 10});
  const auto exact_scores = krum_scores(exact, 1);
  CHECK(exact_scores[1] == exact_scores[2]);
  CHECK(krum(exact, 1).index == 1);
  CHECK(krum(exact, 1).model[0] == 0.125);

  const ParameterVector v{1.0, 2.0};
  std::vector<ParameterVector> same(5, v);
  for (double s : krum_scores(same, 1)) CHECK(s == 0.0);

  std::vector<ParameterVector> dup(5, v);
  dup[0] = ParameterVector{100.0, -100.0};
  CHECK(krum(dup, 1).model == v);
  CHECK(krum(dup, 1).index == 1);

  CHECK_THROWS_AS(krum(scalars({1, 2, 3, 4}), 2), ConfigError);
}

TEST_CASE("trimmed mean examples") {
  CHECK(trimmed_mean(scalars({1, 2, 3, 4, 100}), 1)[0] == 3.0);
  RngStream rng(1, "tm");
  auto models = random_models(7, 4, rng, false);
  CHECK(oracle::max_abs_diff(trimmed_mean(models, 0).vec(), mean(models).vec()) <= 1e-12);
  const auto before = trimmed_mean(models, 2);
  // The raised value must already sit in the trimmed top band; raising a
  // kept value would pull the next one into the average.
  std::size_t top = 0;
  for (std::size_t i = 1; i < models.size(); ++i) {
    if (models[i][2] > models[top][2]) top = i;
  }
  models[top][2] += 1000.0;
  CHECK(oracle::max_abs_diff(trimmed_mean(models, 2).vec(), before.vec()) <= 1e-12);
  CHECK_THROWS_AS(trimmed_mean(models, 4), ConfigError);
}

TEST_CASE("median examples") {
  CHECK(median(scalars({3}))[0] == 3.0);
  CHECK(median(scalars({1, 2, 3, 4}))[0] == 2.5);
  CHECK(median(scalars({1, 5, 2}))[0] == 2.0);
  CHECK_THROWS_AS(median(std::vector<ParameterVector>{}), ConfigError);
}

TEST_CASE("bulyan examples") {
  const ParameterVector v{0.5, -1.0, 2.0};
  CHECK(bulyan(std::vector<ParameterVector>(7, v), 1, 5, 3) == v);

  // With c = 0 every model is selected; gamma = 3 keeps the 3 values closest to 3.
  CHECK(bulyan(scalars({1, 2, 3, 4, 10}), 0, 5, 3)[0] == doctest::Approx(3.0));

  RngStream rng(3, "bulyan");
  const auto models = random_models(6, 3, rng, false);
  CHECK(oracle::max_abs_diff(bulyan(models, 0, 6, 6).vec(), mean(models).vec()) <= 1e-12);
  CHECK_THROWS_AS(bulyan(models, 1, 5, 3), ConfigError);  // theta > m - 2c
  CHECK_THROWS_AS(bulyan(models, 1, 4, 3), ConfigError);  // gamma > theta - 2c
}

TEST_CASE("every rule matches its brute-force oracle") {
  RngStream rng(2024, "oracle");
  for (int trial = 0; trial < 200; ++trial) {
    const bool integer = trial % 2 == 0;
    const std::size_t m = 3 + rng.uniform_index(5);  // 3..7
    const std::size_t d = 1 + rng.uniform_index(5);  // 1..5
    const auto models = random_models(m, d, rng, integer);
    const auto set = oracle::to_set(models);

    CHECK(oracle::max_abs_diff(mean(models).vec(), oracle::mean(set)) <= 1e-12);
    CHECK(oracle::max_abs_diff(median(models).vec(), oracle::median(set)) <= 1e-12);
    for (std::size_t beta = 0; 2 * beta < m; ++beta) {
      CHECK(oracle::max_abs_diff(trimmed_mean(models, beta).vec(), oracle::trimmed_mean(set, beta)) <= 1e-12);
    }
    for (std::size_t c = 0; c + 3 <= m; ++c) {
      const auto scores = krum_scores(models, c);
      const auto expect = oracle::krum_scores(set, c);
      CHECK(oracle::max_abs_diff(scores, expect) <= 1e-12);
      const auto sel = krum(models, c);
      CHECK(sel.index == oracle::krum_index(set, c));
      CHECK(sel.model == models[sel.index]);
    }
    for (std::size_t c = 0; 2 * c + 3 <= m; ++c) {
      for (std::size_t theta = 2 * c + 1; theta + 2 * c <= m; ++theta) {
        for (std::size_t gamma = 1; gamma + 2 * c <= theta; ++gamma) {
          AggregatorSpec spec = AggregatorSpec::bulyan(c, theta, gamma);
          try {
            spec.validate(m);
          } catch (const ConfigError&) {
            continue;
          }
          CHECK(oracle::max_abs_diff(bulyan(models, c, theta, gamma).vec(),
                                     oracle::bulyan(set, c, theta, gamma)) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("rules are permutation invariant") {
  RngStream rng(77, "perm");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 11;
    const auto models = random_models(m, 4, rng, false);
    const auto perm = random_permutation(m, rng);
    std::vector<ParameterVector> shuffled;
    for (std::size_t i : perm) shuffled.push_back(models[i]);

    CHECK(oracle::max_abs_diff(mean(models).vec(), mean(shuffled).vec()) <= 1e-12);
    CHECK(median(models) == median(shuffled));
    CHECK(oracle::max_abs_diff(trimmed_mean(models, 2).vec(), trimmed_mean(shuffled, 2).vec()) <= 1e-12);
    const auto a = krum(models, 2);
    const auto b = krum(shuffled, 2);
    CHECK(perm[b.index] == a.index);
    CHECK(a.model == b.model);
    const auto scores = krum_scores(models, 2);
    const auto pscores = krum_scores(shuffled, 2);
    for (std::size_t i = 0; i < m; ++i) CHECK(pscores[i] == doctest::Approx(scores[perm[i]]).epsilon(1e-12));
    // Every inner Krum round keeps at least two neighbors. With one neighbor,
    // mutual nearest pairs tie exactly and the index rule decides.
    CHECK(oracle::max_abs_diff(bulyan(models, 2, 5, 1).vec(), bulyan(shuffled, 2, 5, 1).vec()) <= 1e-12);
  }
}

TEST_CASE("median equals trimmed mean with maximal trim for odd m") {
  RngStream rng(5, "medtm");
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t m = 1 + 2 * rng.uniform_index(4);
    const auto models = random_models(m, 3, rng, trial % 2 == 0);
    CHECK(median(models) == trimmed_mean(models, (m - 1) / 2));
  }
}

TEST_CASE("pairwise distances are symmetric and match squared_distance") {
  RngStream rng(6, "pd");
  const auto models = random_models(9, 700, rng, false);
  const auto dist = pairwise_squared_distances(models);
  for (std::size_t i = 0; i < 9; ++i) {
    CHECK(dist[i * 9 + i] == 0.0);
    for (std::size_t j = 0; j < 9; ++j) {
      CHECK(dist[i * 9 + j] == dist[j * 9 + i]);
      if (i != j) CHECK(dist[i * 9 + j] == squared_distance(models[i], models[j]));
    }
  }
}

TEST_CASE("leave-one-out aggregates equal direct recomputation") {
  RngStream rng(8, "loo");
  const std::vector<AggregatorSpec> specs{AggregatorSpec::mean(), AggregatorSpec::krum(1),
                                          AggregatorSpec::trimmed_mean(2), AggregatorSpec::median(),
                                          AggregatorSpec::bulyan(1, 4, 2)};
  for (int trial = 0; trial < 20; ++trial) {
    const auto models = random_models(8, 5, rng, trial % 2 == 0);
    for (const auto& spec : specs) {
      const auto loo = leave_one_out_aggregates(spec, models);
      REQUIRE(loo.size() == models.size());
      for (std::size_t i = 0; i < models.size(); ++i) {
        std::vector<ParameterVector> rest;
        for (std::size_t k = 0; k < models.size(); ++k) {
          if (k != i) rest.push_back(models[k]);
        }
        CHECK(oracle::max_abs_diff(loo[i].vec(), aggregate(spec, rest).vec()) <= 1e-12);
      }
    }
  }
}

TEST_CASE("aggregator specs validate their constraints") {
  CHECK_NOTHROW(AggregatorSpec::trimmed_mean(2).validate(5));
  CHECK_THROWS_AS(AggregatorSpec::trimmed_mean(3).validate(5), ConfigError);
  CHECK_THROWS_AS((AggregatorSpec{AggregationRule::kTrimmedMean, 3, 2}).validate(10), ConfigError);
  CHECK_NOTHROW(AggregatorSpec::krum(2).validate(5));
  CHECK_THROWS_AS(AggregatorSpec::krum(3).validate(5), ConfigError);
  CHECK(parse_aggregation_rule("trimmed_mean") == AggregationRule::kTrimmedMean);
  CHECK(to_string(AggregationRule::kBulyan) == "bulyan");
  CHECK_THROWS_AS(parse_aggregation_rule("average"), ConfigError);
}
