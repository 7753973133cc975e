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

#include "fedpoison/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace fedpoison {

bool ParameterVector::all_finite() const noexcept {
  return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

void ParameterVector::require_finite(std::string_view where) const {
  if (!all_finite()) {
    throw std::domain_error(std::string(where) + ": parameter vector has a non-finite entry");
  }
}

ParameterVector& ParameterVector::operator+=(const ParameterVector& other) {
  require_same_dim(*this, other, "operator+=");
  for (std::size_t j = 0; j < values_.size(); ++j) values_[j] += other.values_[j];
  return *this;
}

ParameterVector& ParameterVector::operator-=(const ParameterVector& other) {
  require_same_dim(*this, other, "operator-=");
  for (std::size_t j = 0; j < values_.size(); ++j) values_[j] -= other.values_[j];
  return *this;
}

ParameterVector& ParameterVector::operator*=(double scale) noexcept {
  for (double& v : values_) v *= scale;
  return *this;
}

ParameterVector operator+(ParameterVector a, const ParameterVector& b) { return a += b; }
ParameterVector operator-(ParameterVector a, const ParameterVector& b) { return a -= b; }
ParameterVector operator*(double scale, ParameterVector v) { return v *= scale; }

void require_same_dim(const ParameterVector& a, const ParameterVector& b, std::string_view where) {
  if (a.dim() != b.dim()) {
    throw DimensionError(std::string(where) + ": dimension mismatch (" + std::to_string(a.dim()) +
                         " vs " + std::to_string(b.dim()) + ")");
  }
}

std::size_t common_dim(std::span<const ParameterVector> models, std::string_view where) {
  if (models.empty()) throw ConfigError(std::string(where) + ": empty model set");
  const std::size_t d = models.front().dim();
  for (const auto& m : models) {
    if (m.dim() != d) throw DimensionError(std::string(where) + ": models disagree on dimension");
  }
  return d;
}

LocalModelSet::LocalModelSet(std::vector<ParameterVector> models, std::vector<std::size_t> compromised)
    : models_(std::move(models)), compromised_(std::move(compromised)) {
  if (!models_.empty()) common_dim(models_, "LocalModelSet");
  std::sort(compromised_.begin(), compromised_.end());
  if (std::adjacent_find(compromised_.begin(), compromised_.end()) != compromised_.end()) {
    throw ConfigError("LocalModelSet: duplicate compromised index");
  }
  if (!compromised_.empty() && compromised_.back() >= models_.size()) {
    throw ConfigError("LocalModelSet: compromised index out of range");
  }
  if (2 * compromised_.size() >= models_.size() && !compromised_.empty()) {
    throw ConfigError("LocalModelSet: compromised devices must be fewer than half of m");
  }
}

LocalModelSet LocalModelSet::with_first_compromised(std::vector<ParameterVector> models, std::size_t c) {
  std::vector<std::size_t> idx(c);
  for (std::size_t i = 0; i < c; ++i) idx[i] = i;
  return LocalModelSet(std::move(models), std::move(idx));
}

bool LocalModelSet::is_compromised(std::size_t device) const noexcept {
  return std::binary_search(compromised_.begin(), compromised_.end(), device);
}

std::vector<ParameterVector> LocalModelSet::benign_models() const {
  std::vector<ParameterVector> out;
  out.reserve(models_.size() - compromised_.size());
  for (std::size_t i = 0; i < models_.size(); ++i) {
    if (!is_compromised(i)) out.push_back(models_[i]);
  }
  return out;
}

std::vector<ParameterVector> LocalModelSet::compromised_models() const {
  std::vector<ParameterVector> out;
  out.reserve(compromised_.size());
  for (std::size_t i : compromised_) out.push_back(models_[i]);
  return out;
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

std::uint64_t fnv1a(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view label)
    : seed_(seed), label_(label), engine_(mix_seed(seed, fnv1a(label))) {}

std::uint64_t RngStream::next_u64() { return engine_(); }

double RngStream::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  if (n == 0) throw ConfigError("RngStream::uniform_index: empty range");
  // Rejection sampling keeps the draw exactly uniform.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double RngStream::normal(double mean, double stddev) {
  if (has_spare_normal_) {
    has_spare_normal_ = false;
    return mean + stddev * spare_normal_;
  }
  // Marsaglia polar method.
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double factor = std::sqrt(-2.0 * std::log(s) / s);
  spare_normal_ = v * factor;
  has_spare_normal_ = true;
  return mean + stddev * u * factor;
}

RngStream RngStream::derive(std::string_view sublabel) const {
  std::string child = label_;
  child += '/';
  child += sublabel;
  return RngStream(seed_, child);
}

double squared_distance(const ParameterVector& a, const ParameterVector& b) {
  require_same_dim(a, b, "squared_distance");
  // Fixed four-way split of the sum: symmetric in (a, b) and reproducible.
  const double* pa = a.values().data();
  const double* pb = b.values().data();
  const std::size_t n = a.dim();
  double s[4] = {0.0, 0.0, 0.0, 0.0};
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    for (std::size_t r = 0; r < 4; ++r) {
      const double diff = pa[j + r] - pb[j + r];
      s[r] += diff * diff;
    }
  }
  for (; j < n; ++j) {
    const double diff = pa[j] - pb[j];
    s[0] += diff * diff;
  }
  return (s[0] + s[1]) + (s[2] + s[3]);
}

double euclidean_distance(const ParameterVector& a, const ParameterVector& b) {
  return std::sqrt(squared_distance(a, b));
}

ParameterVector signed_direction(const ParameterVector& current, const ParameterVector& previous) {
  require_same_dim(current, previous, "signed_direction");
  ParameterVector out(current.dim());
  for (std::size_t j = 0; j < current.dim(); ++j) {
    out[j] = current[j] < previous[j] ? -1.0 : 1.0;
  }
  return out;
}

}  // namespace fedpoison
