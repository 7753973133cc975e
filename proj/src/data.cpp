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

#include "fedpoison/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

namespace fedpoison {

Dataset::Dataset(std::vector<double> features, std::size_t num_features, std::vector<int> labels,
                 int num_classes)
    : features_(std::move(features)),
      num_features_(num_features),
      labels_(std::move(labels)),
      num_classes_(num_classes) {
  if (num_classes_ < 2) throw ConfigError("Dataset: need at least two classes");
  if (num_features_ == 0) throw ConfigError("Dataset: need at least one feature");
  if (features_.size() != labels_.size() * num_features_) {
    throw DimensionError("Dataset: feature rows and labels disagree in count");
  }
  for (int l : labels_) {
    if (l < 0 || l >= num_classes_) throw ConfigError("Dataset: label out of range");
  }
  nz_offset_.assign(1, 0);
  nz_offset_.reserve(labels_.size() + 1);
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    const double* r = features_.data() + i * num_features_;
    for (std::size_t j = 0; j < num_features_; ++j) {
      if (r[j] != 0.0) nz_index_.push_back(static_cast<std::uint32_t>(j));
    }
    nz_offset_.push_back(nz_index_.size());
  }
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  std::vector<double> feats;
  feats.reserve(indices.size() * num_features_);
  std::vector<int> labs;
  labs.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw ConfigError("Dataset::subset: index out of range");
    auto r = row(i);
    feats.insert(feats.end(), r.begin(), r.end());
    labs.push_back(labels_[i]);
  }
  return Dataset(std::move(feats), num_features_, std::move(labs), num_classes_);
}

Dataset Dataset::with_labels(std::vector<int> labels) const {
  return Dataset(features_, num_features_, std::move(labels), num_classes_);
}

// ---------------------------------------------------------------------------
// IDX

namespace {

constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::uint32_t kIdxImageMagic = 0x00000803;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(ParseErrorKind::kIo, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& buf, std::size_t offset,
                        const std::filesystem::path& path) {
  if (buf.size() < offset + 4) {
    throw ParseError(ParseErrorKind::kTruncated, path.string() + ": truncated header");
  }
  return (std::uint32_t{buf[offset]} << 24) | (std::uint32_t{buf[offset + 1]} << 16) |
         (std::uint32_t{buf[offset + 2]} << 8) | std::uint32_t{buf[offset + 3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> bytes{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                                  static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(bytes.data(), 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 std::optional<int> num_classes) {
  const auto img = read_all(images);
  const auto lab = read_all(labels);

  if (read_be32(img, 0, images) != kIdxImageMagic) {
    throw ParseError(ParseErrorKind::kBadMagic, images.string() + ": bad IDX image magic");
  }
  if (read_be32(lab, 0, labels) != kIdxLabelMagic) {
    throw ParseError(ParseErrorKind::kBadMagic, labels.string() + ": bad IDX label magic");
  }
  const std::size_t n = read_be32(img, 4, images);
  const std::size_t rows = read_be32(img, 8, images);
  const std::size_t cols = read_be32(img, 12, images);
  const std::size_t n_labels = read_be32(lab, 4, labels);
  if (n != n_labels) {
    throw ParseError(ParseErrorKind::kCountMismatch,
                     "IDX count mismatch: " + std::to_string(n) + " images vs " +
                         std::to_string(n_labels) + " labels");
  }
  const std::size_t q = rows * cols;
  if (img.size() < 16 + n * q) {
    throw ParseError(ParseErrorKind::kTruncated, images.string() + ": truncated pixel payload");
  }
  if (lab.size() < 8 + n) {
    throw ParseError(ParseErrorKind::kTruncated, labels.string() + ": truncated label payload");
  }

  std::vector<double> feats(n * q);
  for (std::size_t k = 0; k < n * q; ++k) feats[k] = img[16 + k] / 255.0;
  std::vector<int> labs(n);
  int max_label = 0;
  for (std::size_t i = 0; i < n; ++i) {
    labs[i] = lab[8 + i];
    max_label = std::max(max_label, labs[i]);
  }
  const int L = num_classes.value_or(std::max(2, max_label + 1));
  if (max_label >= L) {
    throw ParseError(ParseErrorKind::kUnknownLabel, labels.string() + ": label exceeds class count");
  }
  return Dataset(std::move(feats), q, std::move(labs), L);
}

void write_idx(const Dataset& data, std::size_t rows, std::size_t cols,
               const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (rows * cols != data.num_features()) throw DimensionError("write_idx: rows*cols != q");
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw ParseError(ParseErrorKind::kIo, "write_idx: cannot open output");
  write_be32(img, kIdxImageMagic);
  write_be32(img, static_cast<std::uint32_t>(data.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  for (double v : data.features()) {
    img.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  }
  write_be32(lab, kIdxLabelMagic);
  write_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels()) lab.put(static_cast<char>(l));
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    std::size_t start = cell.find_first_not_of(' ');
    cells.push_back(start == std::string::npos ? std::string{} : cell.substr(start));
  }
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || s.empty()) return std::nullopt;
  return v;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path, const CsvOptions& options) {
  std::ifstream in(path);
  if (!in) throw ParseError(ParseErrorKind::kIo, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(ParseErrorKind::kMalformed, "empty CSV");
  const auto header = split_csv_line(line);

  std::optional<std::size_t> label_col;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == options.label_column) {
      label_col = c;
    } else if (std::find(options.ignore_columns.begin(), options.ignore_columns.end(), header[c]) ==
               options.ignore_columns.end()) {
      feature_cols.push_back(c);
    }
  }
  if (!label_col) {
    throw ParseError(ParseErrorKind::kMalformed, "label column '" + options.label_column + "' missing");
  }

  std::vector<double> feats;
  std::vector<std::string> raw_labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ParseError(ParseErrorKind::kMalformed,
                       "line " + std::to_string(line_no) + ": expected " +
                           std::to_string(header.size()) + " cells");
    }
    for (std::size_t c : feature_cols) {
      auto v = parse_double(cells[c]);
      if (!v || !std::isfinite(*v)) {
        throw ParseError(ParseErrorKind::kNonNumeric,
                         "line " + std::to_string(line_no) + ": non-numeric cell '" + cells[c] + "'");
      }
      feats.push_back(*v);
    }
    raw_labels.push_back(cells[*label_col]);
  }

  const int L = options.num_classes;
  std::map<std::string, int> vocab;
  if (!options.label_names.empty()) {
    for (std::size_t k = 0; k < options.label_names.size(); ++k) {
      vocab[options.label_names[k]] = static_cast<int>(k);
    }
  } else {
    bool all_int = true;
    for (const auto& s : raw_labels) {
      int v = 0;
      auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
      if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0 || v >= L) {
        all_int = false;
        break;
      }
    }
    if (all_int) {
      for (int k = 0; k < L; ++k) vocab[std::to_string(k)] = k;
    } else {
      int next = 0;
      std::map<std::string, int> sorted;
      for (const auto& s : raw_labels) sorted.emplace(s, 0);
      for (auto& [name, idx] : sorted) idx = next++;
      vocab = std::move(sorted);
    }
  }
  std::vector<int> labs;
  labs.reserve(raw_labels.size());
  for (const auto& s : raw_labels) {
    auto it = vocab.find(s);
    if (it == vocab.end() || it->second >= L) {
      throw ParseError(ParseErrorKind::kUnknownLabel, "unknown label value '" + s + "'");
    }
    labs.push_back(it->second);
  }

  // Per-column min-max scaling; constant columns map to zero.
  const std::size_t q = feature_cols.size();
  const std::size_t n = labs.size();
  for (std::size_t c = 0; c < q; ++c) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
      lo = std::min(lo, feats[i * q + c]);
      hi = std::max(hi, feats[i * q + c]);
    }
    const double range = hi - lo;
    for (std::size_t i = 0; i < n; ++i) {
      double& v = feats[i * q + c];
      v = range > 0.0 ? (v - lo) / range : 0.0;
    }
  }
  return Dataset(std::move(feats), q, std::move(labs), L);
}

void write_csv(const Dataset& data, const std::filesystem::path& path,
               const std::string& label_column) {
  std::ofstream out(path);
  if (!out) throw ParseError(ParseErrorKind::kIo, "cannot write " + path.string());
  for (std::size_t c = 0; c < data.num_features(); ++c) out << 'f' << c << ',';
  out << label_column << '\n';
  out << std::setprecision(17);
  for (std::size_t i = 0; i < data.size(); ++i) {
    for (double v : data.row(i)) out << v << ',';
    out << data.label(i) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Synthetic data

std::vector<double> blob_mean(int k, std::size_t num_features) {
  // Class k sits at distance (1 + k / q) along axis k mod q, so means are
  // distinct for any (L, q).
  std::vector<double> mean(num_features, 0.0);
  const std::size_t axis = static_cast<std::size_t>(k) % num_features;
  mean[axis] = 1.0 + static_cast<double>(static_cast<std::size_t>(k) / num_features);
  return mean;
}

Dataset synth_blobs(int num_classes, std::size_t per_class, std::size_t num_features, double spread,
                    RngStream& rng) {
  if (num_classes < 2 || num_features < 1) throw ConfigError("synth_blobs: need L >= 2 and q >= 1");
  if (spread < 0.0) throw ConfigError("synth_blobs: spread must be non-negative");
  std::vector<double> feats;
  feats.reserve(static_cast<std::size_t>(num_classes) * per_class * num_features);
  std::vector<int> labs;
  for (int k = 0; k < num_classes; ++k) {
    const auto mean = blob_mean(k, num_features);
    for (std::size_t i = 0; i < per_class; ++i) {
      for (std::size_t j = 0; j < num_features; ++j) feats.push_back(rng.normal(mean[j], spread));
      labs.push_back(k);
    }
  }
  return Dataset(std::move(feats), num_features, std::move(labs), num_classes);
}

// ---------------------------------------------------------------------------
// Partitioning and sampling

std::vector<std::vector<std::size_t>> Partition::shards() const {
  std::vector<std::vector<std::size_t>> out(num_devices);
  for (std::size_t i = 0; i < assignment.size(); ++i) out[assignment[i]].push_back(i);
  return out;
}

Partition partition_noniid(const Dataset& data, std::size_t num_devices, double p, RngStream& rng) {
  const auto L = static_cast<std::size_t>(data.num_classes());
  if (num_devices == 0 || num_devices % L != 0) {
    throw ConfigError("partition_noniid: number of devices must be a positive multiple of L");
  }
  if (!(p > 0.0 && p <= 1.0)) throw ConfigError("partition_noniid: p must lie in (0, 1]");
  const std::size_t group_size = num_devices / L;
  Partition out;
  out.num_devices = num_devices;
  out.assignment.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto l = static_cast<std::size_t>(data.label(i));
    std::size_t group = l;
    if (rng.uniform() >= p) {
      // One of the other L-1 groups, uniformly.
      std::size_t other = rng.uniform_index(L - 1);
      group = other >= l ? other + 1 : other;
    }
    out.assignment[i] = group * group_size + rng.uniform_index(group_size);
  }
  return out;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, RngStream& rng) {
  if (k > n) throw ConfigError("sample_without_replacement: k exceeds n");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + rng.uniform_index(n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(k);
  return pool;
}

Batch sample_batch(std::span<const std::size_t> device_instances, std::size_t batch_size,
                   RngStream& rng) {
  if (device_instances.empty()) throw ConfigError("sample_batch: empty device shard");
  if (batch_size == 0) throw ConfigError("sample_batch: batch size must be positive");
  const std::size_t k = std::min(batch_size, device_instances.size());
  const auto picks = sample_without_replacement(device_instances.size(), k, rng);
  Batch batch;
  batch.indices.reserve(k);
  for (std::size_t p : picks) batch.indices.push_back(device_instances[p]);
  return batch;
}

TrainTestSplit train_test_split(const Dataset& data, std::size_t test_count, RngStream& rng) {
  if (test_count >= data.size()) throw ConfigError("train_test_split: test split leaves no training data");
  auto order = sample_without_replacement(data.size(), data.size(), rng);
  std::span<const std::size_t> all(order);
  return {data.subset(all.subspan(test_count)), data.subset(all.first(test_count))};
}

}  // namespace fedpoison
