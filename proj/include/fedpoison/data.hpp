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
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedpoison/core.hpp"

namespace fedpoison {

enum class ParseErrorKind {
  kIo,
  kBadMagic,
  kTruncated,
  kCountMismatch,
  kNonNumeric,
  kUnknownLabel,
  kMalformed,
};

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] ParseErrorKind kind() const noexcept { return kind_; }

 private:
  ParseErrorKind kind_;
};

/// n x q feature matrix (row-major) plus n labels in {0..L-1}.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::vector<double> features, std::size_t num_features, std::vector<int> labels,
          int num_classes);

  [[nodiscard]] std::size_t size() const noexcept { return labels_.size(); }
  [[nodiscard]] bool empty() const noexcept { return labels_.empty(); }
  [[nodiscard]] std::size_t num_features() const noexcept { return num_features_; }
  [[nodiscard]] int num_classes() const noexcept { return num_classes_; }

  [[nodiscard]] std::span<const double> row(std::size_t i) const noexcept {
    return {features_.data() + i * num_features_, num_features_};
  }
  /// Column indices of the non-zero features of row i, ascending.
  [[nodiscard]] std::span<const std::uint32_t> nonzero(std::size_t i) const noexcept {
    return {nz_index_.data() + nz_offset_[i], nz_offset_[i + 1] - nz_offset_[i]};
  }
  [[nodiscard]] int label(std::size_t i) const noexcept { return labels_[i]; }
  [[nodiscard]] const std::vector<int>& labels() const noexcept { return labels_; }
  [[nodiscard]] const std::vector<double>& features() const noexcept { return features_; }

  /// Rows `indices` in the given order.
  [[nodiscard]] Dataset subset(std::span<const std::size_t> indices) const;
  /// Copy with every label replaced.
  [[nodiscard]] Dataset with_labels(std::vector<int> labels) const;

 private:
  std::vector<double> features_;
  std::size_t num_features_ = 0;
  std::vector<int> labels_;
  int num_classes_ = 0;
  std::vector<std::uint32_t> nz_index_;
  std::vector<std::size_t> nz_offset_{0};
};

/// Reads an IDX image file (magic 0x00000803) and its IDX label file
/// (magic 0x00000801). Pixels are scaled to [0,1] and flattened row-major.
/// `num_classes` defaults to max(label)+1, and at least 2.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<int> num_classes = std::nullopt);

/// Writes the inverse of load_idx (pixels rounded back to bytes). `rows` and
/// `cols` must multiply to the feature count.
void write_idx(const Dataset& data, std::size_t rows, std::size_t cols,
               const std::filesystem::path& images, const std::filesystem::path& labels);

struct CsvOptions {
  std::string label_column = "label";
  int num_classes = 2;
  /// Explicit label vocabulary; position = class index. When empty, integer
  /// labels in [0, L) are used directly, otherwise distinct values are sorted.
  std::vector<std::string> label_names;
  /// Columns skipped entirely (e.g. record ids).
  std::vector<std::string> ignore_columns;
};

/// Comma-separated file with one header row. Every feature column is min-max
/// scaled to [0,1]; constant columns become zero.
Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options);

/// Header row f0..f{q-1},label; labels written as integers.
void write_csv(const Dataset& data, const std::filesystem::path& path,
               const std::string& label_column = "label");

/// L Gaussian clusters in q dimensions with `per_class` points each. Class k
/// is centered on a fixed, class-distinct mean; `spread` is the per-axis
/// standard deviation.
Dataset synth_blobs(int num_classes, std::size_t per_class, std::size_t num_features, double spread,
                    RngStream& rng);

/// Class mean used by synth_blobs for class k.
std::vector<double> blob_mean(int k, std::size_t num_features);

/// assignment[i] = device owning training instance i.
struct Partition {
  std::vector<std::size_t> assignment;
  std::size_t num_devices = 0;

  /// Instance indices owned by each device, ascending.
  [[nodiscard]] std::vector<std::vector<std::size_t>> shards() const;
};

/// Splits the m devices into L equal groups. An instance with label l goes to
/// group l with probability p, otherwise uniformly to one of the other L-1
/// groups; the device inside the group is uniform.
Partition partition_noniid(const Dataset& data, std::size_t num_devices, double p, RngStream& rng);

struct Batch {
  std::vector<std::size_t> indices;
};

/// Uniform sample without replacement of min(B, shard size) instances.
Batch sample_batch(std::span<const std::size_t> device_instances, std::size_t batch_size,
                   RngStream& rng);

/// Seeded shuffle, then the first `test_count` rows become the test split.
struct TrainTestSplit {
  Dataset train;
  Dataset test;
};
TrainTestSplit train_test_split(const Dataset& data, std::size_t test_count, RngStream& rng);

/// Uniformly chosen distinct indices in [0, n).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, RngStream& rng);

}  // namespace fedpoison
