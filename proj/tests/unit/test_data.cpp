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
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "fedpoison/data.hpp"

using namespace fedpoison;
namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "fedpoison_tests";
  fs::create_directories(dir);
  return dir / name;
}

void write_bytes(const fs::path& p, const std::vector<unsigned char>& bytes) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

std::vector<unsigned char> be32(std::uint32_t v) {
  return {static_cast<unsigned char>(v >> 24), static_cast<unsigned char>(v >> 16),
          static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
}

std::vector<unsigned char> idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols,
                                      std::uint32_t magic = 0x803) {
  std::vector<unsigned char> out;
  for (auto v : {magic, n, rows, cols}) {
    auto b = be32(v);
    out.insert(out.end(), b.begin(), b.end());
  }
  for (std::uint32_t i = 0; i < n * rows * cols; ++i) out.push_back(static_cast<unsigned char>(i % 256));
  return out;
}

std::vector<unsigned char> idx_labels(const std::vector<unsigned char>& labels, std::uint32_t magic = 0x801) {
  std::vector<unsigned char> out = be32(magic);
  auto n = be32(static_cast<std::uint32_t>(labels.size()));
  out.insert(out.end(), n.begin(), n.end());
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

ParseErrorKind parse_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const ParseError& e) {
    return e.kind();
  }
  FAIL("expected a ParseError");
  return ParseErrorKind::kIo;
}

}  // namespace

TEST_CASE("load_idx reads header, labels and scaled pixels") {
  auto img = idx_images(2, 28, 28);
  img[16] = 255;
  write_bytes(temp_path("ok-img"), img);
  write_bytes(temp_path("ok-lab"), idx_labels({7, 3}));
  const Dataset d = load_idx(temp_path("ok-img"), temp_path("ok-lab"), 10);
  CHECK(d.size() == 2);
  CHECK(d.num_features() == 784);
  CHECK(d.num_classes() == 10);
  CHECK(d.label(0) == 7);
  CHECK(d.label(1) == 3);
  CHECK(d.row(0)[0] == 1.0);
  CHECK(d.row(0)[1] == doctest::Approx(1.0 / 255.0));
  for (double v : d.features()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
}

TEST_CASE("load_idx reports distinct parse errors") {
  write_bytes(temp_path("img"), idx_images(2, 2, 2));
  write_bytes(temp_path("lab"), idx_labels({1, 0}));
  write_bytes(temp_path("bad-magic"), idx_images(2, 2, 2, 0x804));
  write_bytes(temp_path("bad-lab-magic"), idx_labels({1, 0}, 0x802));
  auto truncated = idx_images(2, 2, 2);
  truncated.pop_back();
  write_bytes(temp_path("trunc"), truncated);
  write_bytes(temp_path("lab3"), idx_labels({1, 0, 1}));

  CHECK(parse_kind([] { load_idx(temp_path("bad-magic"), temp_path("lab")); }) == ParseErrorKind::kBadMagic);
  CHECK(parse_kind([] { load_idx(temp_path("img"), temp_path("bad-lab-magic")); }) == ParseErrorKind::kBadMagic);
  CHECK(parse_kind([] { load_idx(temp_path("trunc"), temp_path("lab")); }) == ParseErrorKind::kTruncated);
  CHECK(parse_kind([] { load_idx(temp_path("img"), temp_path("lab3")); }) == ParseErrorKind::kCountMismatch);
  CHECK(parse_kind([] { load_idx(temp_path("missing"), temp_path("lab")); }) == ParseErrorKind::kIo);
}

TEST_CASE("write_idx and load_idx round trip") {
  RngStream rng(1, "idx");
  std::vector<double> feats;
  std::vector<int> labels;
  for (int i = 0; i < 6; ++i) {
    for (int j = 0; j < 12; ++j) feats.push_back(static_cast<double>(rng.uniform_index(256)) / 255.0);
    labels.push_back(i % 3);
  }
  const Dataset d(feats, 12, labels, 3);
  write_idx(d, 3, 4, temp_path("rt-img"), temp_path("rt-lab"));
  const Dataset back = load_idx(temp_path("rt-img"), temp_path("rt-lab"), 3);
  CHECK(back.labels() == d.labels());
  for (std::size_t k = 0; k < feats.size(); ++k) CHECK(back.features()[k] == doctest::Approx(feats[k]).epsilon(1e-12));
}

TEST_CASE("load_csv maps string labels and min-max scales") {
  write_text(temp_path("bc.csv"),
             "id,f1,f2,f3,diagnosis\n"
             "1,10,5,7,M\n"
             "2,20,5,9,B\n"
             "3,30,5,8,M\n");
  CsvOptions opt;
  opt.label_column = "diagnosis";
  opt.num_classes = 2;
  opt.ignore_columns = {"id"};
  const Dataset d = load_csv(temp_path("bc.csv"), opt);
  CHECK(d.size() == 3);
  CHECK(d.num_features() == 3);
  CHECK(d.num_classes() == 2);
  CHECK(d.labels() == std::vector<int>{1, 0, 1});  // B -> 0, M -> 1
  CHECK(d.row(0)[0] == 0.0);
  CHECK(d.row(1)[0] == doctest::Approx(0.5));
  CHECK(d.row(2)[0] == 1.0);
  for (std::size_t i = 0; i < 3; ++i) CHECK(d.row(i)[1] == 0.0);  // constant column
}

TEST_CASE("load_csv error kinds") {
  write_text(temp_path("nonnum.csv"), "a,label\n1,0\nx,1\n");
  write_text(temp_path("unknown.csv"), "a,label\n1,0\n2,1\n3,2\n");
  write_text(temp_path("ragged.csv"), "a,b,label\n1,2,0\n3,1\n");
  CsvOptions opt;
  CHECK(parse_kind([&] { load_csv(temp_path("nonnum.csv"), opt); }) == ParseErrorKind::kNonNumeric);
  CHECK(parse_kind([&] { load_csv(temp_path("unknown.csv"), opt); }) == ParseErrorKind::kUnknownLabel);
  CHECK(parse_kind([&] { load_csv(temp_path("ragged.csv"), opt); }) == ParseErrorKind::kMalformed);
  opt.label_names = {"B", "M"};
  write_text(temp_path("vocab.csv"), "a,label\n1,B\n2,X\n");
  CHECK(parse_kind([&] { load_csv(temp_path("vocab.csv"), opt); }) == ParseErrorKind::kUnknownLabel);
}

TEST_CASE("CSV round trip preserves features and labels") {
  RngStream rng(4, "csv");
  std::vector<double> feats;
  std::vector<int> labels;
  for (int i = 0; i < 20; ++i) {
    for (int j = 0; j < 4; ++j) feats.push_back(rng.uniform());
    labels.push_back(i % 3);
  }
  // Pin every column's range to [0, 1] so min-max scaling is the identity.
  for (int j = 0; j < 4; ++j) {
    feats[j] = 0.0;
    feats[4 + j] = 1.0;
  }
  const Dataset d(feats, 4, labels, 3);
  write_csv(d, temp_path("rt.csv"));
  CsvOptions opt;
  opt.num_classes = 3;
  const Dataset back = load_csv(temp_path("rt.csv"), opt);
  CHECK(back.labels() == d.labels());
  for (std::size_t k = 0; k < feats.size(); ++k) CHECK(std::abs(back.features()[k] - feats[k]) <= 1e-9);
}

TEST_CASE("synth_blobs shape, determinism and means") {
  RngStream a(1, "blobs");
  RngStream b(1, "blobs");
  const Dataset d1 = synth_blobs(2, 10, 2, 0.01, a);
  const Dataset d2 = synth_blobs(2, 10, 2, 0.01, b);
  CHECK(d1.size() == 20);
  CHECK(d1.features() == d2.features());
  CHECK(d1.labels() == d2.labels());

  RngStream c(2, "blobs");
  const Dataset d3 = synth_blobs(3, 100, 5, 0.5, c);
  for (int k = 0; k < 3; ++k) {
    const auto mu = blob_mean(k, 5);
    std::vector<double> acc(5, 0.0);
    int count = 0;
    for (std::size_t i = 0; i < d3.size(); ++i) {
      if (d3.label(i) != k) continue;
      ++count;
      for (std::size_t j = 0; j < 5; ++j) acc[j] += d3.row(i)[j];
    }
    CHECK(count == 100);
    for (std::size_t j = 0; j < 5; ++j) CHECK(std::abs(acc[j] / count - mu[j]) <= 3.0 * 0.5 / 10.0);
  }
}

TEST_CASE("synth_blobs with small spread is separable by nearest mean") {
  RngStream rng(8, "sep");
  const Dataset d = synth_blobs(2, 10, 2, 0.01, rng);
  const auto m0 = blob_mean(0, 2);
  const auto m1 = blob_mean(1, 2);
  for (std::size_t i = 0; i < d.size(); ++i) {
    double d0 = 0.0, d1 = 0.0;
    for (std::size_t j = 0; j < 2; ++j) {
      d0 += (d.row(i)[j] - m0[j]) * (d.row(i)[j] - m0[j]);
      d1 += (d.row(i)[j] - m1[j]) * (d.row(i)[j] - m1[j]);
    }
    CHECK((d0 < d1) == (d.label(i) == 0));
  }
}

namespace {

Dataset labelled(std::vector<int> labels, int L) {
  std::vector<double> feats(labels.size(), 0.5);
  return Dataset(feats, 1, std::move(labels), L);
}

}  // namespace

TEST_CASE("partition_noniid conserves instances and respects p = 1") {
  std::vector<int> labels;
  for (int i = 0; i < 400; ++i) labels.push_back(i % 4);
  const Dataset d = labelled(labels, 4);
  RngStream rng(3, "partition");
  const auto part = partition_noniid(d, 8, 1.0, rng);
  const auto shards = part.shards();
  std::vector<std::size_t> all;
  for (const auto& s : shards) all.insert(all.end(), s.begin(), s.end());
  std::sort(all.begin(), all.end());
  std::vector<std::size_t> expect(400);
  std::iota(expect.begin(), expect.end(), std::size_t{0});
  CHECK(all == expect);
  for (std::size_t dev = 0; dev < 8; ++dev) {
    for (std::size_t i : shards[dev]) CHECK(static_cast<std::size_t>(d.label(i)) == dev / 2);
  }
}

TEST_CASE("partition_noniid group frequency") {
  const Dataset d = labelled(std::vector<int>(10000, 0), 2);
  RngStream rng(5, "partition");
  const auto part = partition_noniid(d, 4, 0.8, rng);
  std::size_t in_group0 = 0;
  for (std::size_t dev : part.assignment) in_group0 += dev < 2;
  CHECK(std::abs(static_cast<double>(in_group0) / 10000.0 - 0.8) <= 0.02);
}

TEST_CASE("partition_noniid with p = 1/L is uniform over groups") {
  const Dataset d = labelled(std::vector<int>(20000, 1), 4);
  RngStream rng(6, "partition");
  const auto part = partition_noniid(d, 4, 0.25, rng);
  std::vector<double> freq(4, 0.0);
  for (std::size_t dev : part.assignment) freq[dev] += 1.0 / 20000.0;
  for (double f : freq) CHECK(std::abs(f - 0.25) <= 0.015);
}

TEST_CASE("partition_noniid rejects m not divisible by L") {
  const Dataset d = labelled({0, 1, 2}, 3);
  RngStream rng(1, "p");
  CHECK_THROWS_AS(partition_noniid(d, 4, 0.5, rng), ConfigError);
}

TEST_CASE("sample_batch clamp, validity and frequency") {
  RngStream rng(2, "batch");
  std::vector<std::size_t> five{10, 11, 12, 13, 14};
  auto b = sample_batch(five, 32, rng);
  std::sort(b.indices.begin(), b.indices.end());
  CHECK(b.indices == five);
  CHECK(sample_batch(five, 1, rng).indices.size() == 1);
  CHECK_THROWS_AS(sample_batch(std::vector<std::size_t>{}, 4, rng), ConfigError);

  std::vector<std::size_t> ten(10);
  std::iota(ten.begin(), ten.end(), std::size_t{0});
  std::vector<double> count(10, 0.0);
  for (int t = 0; t < 10000; ++t) {
    const auto batch = sample_batch(ten, 2, rng);
    CHECK(batch.indices[0] != batch.indices[1]);
    for (std::size_t i : batch.indices) count[i] += 1.0;
  }
  for (double c : count) CHECK(std::abs(c / 10000.0 - 0.2) <= 0.02);
}

TEST_CASE("train_test_split is a disjoint shuffle") {
  std::vector<int> labels;
  std::vector<double> feats;
  for (int i = 0; i < 50; ++i) {
    labels.push_back(i % 2);
    feats.push_back(static_cast<double>(i));
  }
  const Dataset d(feats, 1, labels, 2);
  RngStream rng(1, "split");
  const auto split = train_test_split(d, 10, rng);
  CHECK(split.test.size() == 10);
  CHECK(split.train.size() == 40);
  std::set<double> seen;
  for (double v : split.train.features()) seen.insert(v);
  for (double v : split.test.features()) seen.insert(v);
  CHECK(seen.size() == 50);
  CHECK_THROWS_AS(train_test_split(d, 50, rng), ConfigError);
}

TEST_CASE("Dataset validation and nonzero index") {
  CHECK_THROWS_AS(Dataset({0.0, 1.0}, 1, {0, 2}, 2), ConfigError);
  CHECK_THROWS_AS(Dataset({0.0, 1.0}, 1, {0}, 2), DimensionError);
  CHECK_THROWS_AS(Dataset({0.0}, 1, {0}, 1), ConfigError);
  const Dataset d({0.0, 2.0, 0.0, 3.0, 0.0, 0.0}, 3, {0, 1}, 2);
  CHECK(std::vector<std::uint32_t>(d.nonzero(0).begin(), d.nonzero(0).end()) == std::vector<std::uint32_t>{1});
  CHECK(std::vector<std::uint32_t>(d.nonzero(1).begin(), d.nonzero(1).end()) == std::vector<std::uint32_t>{0});
}
