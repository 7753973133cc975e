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

// Brute-force reference implementations used as test oracles. They share no
// code with the library: plain loops over std::vector<std::vector<double>>.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <vector>

#include "fedpoison/core.hpp"

namespace oracle {

using Vec = std::vector<double>;
using Set = std::vector<Vec>;

inline Set to_set(const std::vector<fedpoison::ParameterVector>& models) {
  Set out;
  for (const auto& m : models) out.push_back(m.vec());
  return out;
}

inline double sq_dist(const Vec& a, const Vec& b) {
  double acc = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) acc += (a[j] - b[j]) * (a[j] - b[j]);
  return acc;
}

inline Vec mean(const Set& s) {
  Vec out(s[0].size(), 0.0);
  for (const auto& v : s)
    for (std::size_t j = 0; j < v.size(); ++j) out[j] += v[j];
  for (double& x : out) x /= static_cast<double>(s.size());
  return out;
}

// Krum score over the models whose index is in `alive`.
inline double krum_score(const Set& s, const std::vector<std::size_t>& alive, std::size_t i, std::size_t neighbors) {
  std::vector<double> d;
  for (std::size_t k : alive)
    if (k != i) d.push_back(sq_dist(s[i], s[k]));
  std::sort(d.begin(), d.end());
  double acc = 0.0;
  for (std::size_t k = 0; k < neighbors; ++k) acc += d[k];
  return acc;
}

inline std::vector<double> krum_scores(const Set& s, std::size_t c) {
  std::vector<std::size_t> all(s.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<double> out;
  for (std::size_t i = 0; i < s.size(); ++i) out.push_back(krum_score(s, all, i, s.size() - c - 2));
  return out;
}

inline std::size_t krum_index(const Set& s, std::size_t c) {
  const auto scores = krum_scores(s, c);
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] < scores[best]) best = i;
  return best;
}

inline Vec column(const Set& s, std::size_t j) {
  Vec col;
  for (const auto& v : s) col.push_back(v[j]);
  return col;
}

inline double median1(Vec col) {
  std::sort(col.begin(), col.end());
  const std::size_t n = col.size();
  return n % 2 == 1 ? col[n / 2] : (col[n / 2 - 1] + col[n / 2]) / 2.0;
}

inline Vec trimmed_mean(const Set& s, std::size_t beta) {
  Vec out;
  for (std::size_t j = 0; j < s[0].size(); ++j) {
    Vec col = column(s, j);
    std::sort(col.begin(), col.end());
    double acc = 0.0;
    for (std::size_t k = beta; k + beta < col.size(); ++k) acc += col[k];
    out.push_back(acc / static_cast<double>(col.size() - 2 * beta));
  }
  return out;
}

inline Vec median(const Set& s) {
  Vec out;
  for (std::size_t j = 0; j < s[0].size(); ++j) out.push_back(median1(column(s, j)));
  return out;
}

inline Vec bulyan(const Set& s, std::size_t c, std::size_t theta, std::size_t gamma) {
  std::vector<std::size_t> alive(s.size());
  std::iota(alive.begin(), alive.end(), std::size_t{0});
  std::vector<std::size_t> chosen;
  while (chosen.size() < theta) {
    const std::size_t n = alive.size();
    const std::size_t neighbors = n >= c + 2 ? n - c - 2 : 0;
    std::size_t best = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t pos = 0; pos < n; ++pos) {
      const double sc = krum_score(s, alive, alive[pos], neighbors);
      if (sc < best_score) {
        best_score = sc;
        best = pos;
      }
    }
    chosen.push_back(alive[best]);
    alive.erase(alive.begin() + static_cast<long>(best));
  }
  std::sort(chosen.begin(), chosen.end());
  Vec out;
  for (std::size_t j = 0; j < s[0].size(); ++j) {
    Vec col;
    for (std::size_t i : chosen) col.push_back(s[i][j]);
    const double med = median1(col);
    // Selection sort on (distance, position): explicit tie handling.
    std::vector<bool> used(col.size(), false);
    double acc = 0.0;
    for (std::size_t g = 0; g < gamma; ++g) {
      std::size_t pick = col.size();
      for (std::size_t k = 0; k < col.size(); ++k) {
        if (used[k]) continue;
        if (pick == col.size() || std::abs(col[k] - med) < std::abs(col[pick] - med)) pick = k;
      }
      used[pick] = true;
      acc += col[pick];
    }
    out.push_back(acc / static_cast<double>(gamma));
  }
  return out;
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double m = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) m = std::max(m, std::abs(a[j] - b[j]));
  return m;
}

// Direct evaluation of the Krum lambda bound over `cand`.
inline double lambda_bound(const Set& cand, const Vec& w_re, std::size_t m, std::size_t c) {
  const std::size_t d = w_re.size();
  std::vector<std::size_t> all(cand.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  double min_sum = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < cand.size(); ++i) min_sum = std::min(min_sum, krum_score(cand, all, i, m - c - 2));
  double max_d = 0.0;
  for (const auto& w : cand) max_d = std::max(max_d, std::sqrt(sq_dist(w, w_re)));
  return std::sqrt(min_sum / (static_cast<double>(m - 2 * c - 1) * static_cast<double>(d))) +
         max_d / std::sqrt(static_cast<double>(d));
}

}  // namespace oracle
