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
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fedpoison {

/// Raised when two vectors (or a vector and a model spec) disagree on
/// dimension. Always a caller bug.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a configuration violates a documented precondition
/// (aggregator parameter ranges, empty shards, bad CLI/config values).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Flat, fixed-dimension vector of model parameters. This is the unit every
/// aggregation rule and attack operates on.
class ParameterVector {
 public:
  ParameterVector() = default;
  explicit ParameterVector(std::size_t dim, double fill = 0.0) : values_(dim, fill) {}
  explicit ParameterVector(std::vector<double> values) : values_(std::move(values)) {}
  ParameterVector(std::initializer_list<double> values) : values_(values) {}

  [[nodiscard]] std::size_t dim() const noexcept { return values_.size(); }
  [[nodiscard]] bool empty() const noexcept { return values_.empty(); }

  double& operator[](std::size_t j) noexcept { return values_[j]; }
  double operator[](std::size_t j) const noexcept { return values_[j]; }

  [[nodiscard]] std::span<double> values() noexcept { return values_; }
  [[nodiscard]] std::span<const double> values() const noexcept { return values_; }
  [[nodiscard]] const std::vector<double>& vec() const noexcept { return values_; }

  auto begin() noexcept { return values_.begin(); }
  auto end() noexcept { return values_.end(); }
  auto begin() const noexcept { return values_.begin(); }
  auto end() const noexcept { return values_.end(); }

  [[nodiscard]] bool all_finite() const noexcept;

  /// Throws std::domain_error naming `where` if any entry is NaN or infinite.
  void require_finite(std::string_view where) const;

  ParameterVector& operator+=(const ParameterVector& other);
  ParameterVector& operator-=(const ParameterVector& other);
  ParameterVector& operator*=(double scale) noexcept;

  friend bool operator==(const ParameterVector&, const ParameterVector&) = default;

 private:
  std::vector<double> values_;
};

ParameterVector operator+(ParameterVector a, const ParameterVector& b);
ParameterVector operator-(ParameterVector a, const ParameterVector& b);
ParameterVector operator*(double scale, ParameterVector v);

/// Throws DimensionError unless a.dim() == b.dim().
void require_same_dim(const ParameterVector& a, const ParameterVector& b, std::string_view where);

/// The m local models of one iteration. Index = device id; the compromised
/// set holds device indices and by convention is {0..c-1}.
class LocalModelSet {
 public:
  LocalModelSet() = default;

  /// Validates a shared dimension, index range and |compromised| < m/2.
  LocalModelSet(std::vector<ParameterVector> models, std::vector<std::size_t> compromised = {});

  /// Marks the first c devices as compromised.
  static LocalModelSet with_first_compromised(std::vector<ParameterVector> models, std::size_t c);

  [[nodiscard]] std::size_t size() const noexcept { return models_.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return models_.empty() ? 0 : models_.front().dim(); }
  [[nodiscard]] std::span<const ParameterVector> models() const noexcept { return models_; }
  [[nodiscard]] const ParameterVector& operator[](std::size_t i) const noexcept { return models_[i]; }
  [[nodiscard]] const std::vector<std::size_t>& compromised() const noexcept { return compromised_; }
  [[nodiscard]] bool is_compromised(std::size_t device) const noexcept;

  /// Models of devices outside the compromised set, in device order.
  [[nodiscard]] std::vector<ParameterVector> benign_models() const;
  /// Models of the compromised devices, in compromised-set order.
  [[nodiscard]] std::vector<ParameterVector> compromised_models() const;

 private:
  std::vector<ParameterVector> models_;
  std::vector<std::size_t> compromised_;
};

/// Checks that a model span is non-empty and shares one dimension; returns it.
std::size_t common_dim(std::span<const ParameterVector> models, std::string_view where);

/// Seeded random stream. Identical (seed, label) pairs produce identical draw
/// sequences on every platform: the engine is std::mt19937_64 (bit-exact by
/// the standard) and every distribution below is implemented locally rather
/// than through <random>'s implementation-defined distributions.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view label);

  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }
  [[nodiscard]] const std::string& label() const noexcept { return label_; }

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of resolution.
  double uniform();
  /// Uniform in [lo, hi].
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  double normal(double mean = 0.0, double stddev = 1.0);

  /// A child stream keyed on this stream's seed and a sub-label.
  [[nodiscard]] RngStream derive(std::string_view sublabel) const;

 private:
  std::uint64_t seed_;
  std::string label_;
  std::mt19937_64 engine_;
  bool has_spare_normal_ = false;
  double spare_normal_ = 0.0;
};

/// SplitMix64 finalizer; used to derive trial and stream seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) noexcept;

double euclidean_distance(const ParameterVector& a, const ParameterVector& b);
double squared_distance(const ParameterVector& a, const ParameterVector& b);

/// Entry j is +1 if current_j > previous_j, -1 if current_j < previous_j and
/// +1 on an exact tie.
ParameterVector signed_direction(const ParameterVector& current, const ParameterVector& previous);

}  // namespace fedpoison
