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
#include <numeric>
#include <vector>

#include "doctest.h"
#include "fedpoison/data.hpp"
#include "fedpoison/models.hpp"

using namespace fedpoison;

namespace {

Dataset random_dataset(std::size_t n, std::size_t q, int L, RngStream& rng) {
  std::vector<double> feats;
  std::vector<int> labels;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < q; ++j) feats.push_back(rng.uniform() < 0.3 ? 0.0 : rng.normal());
    labels.push_back(static_cast<int>(i % static_cast<std::size_t>(L)));
  }
  return Dataset(feats, q, labels, L);
}

ParameterVector random_params(std::size_t d, RngStream& rng, double scale = 0.5) {
  ParameterVector w(d);
  for (auto& v : w) v = rng.normal(0.0, scale);
  return w;
}

// LR layout: L rows of q weights, then L biases.
std::vector<double> naive_lr_logits(const ParameterVector& w, std::span<const double> x, std::size_t L) {
  const std::size_t q = x.size();
  std::vector<double> z(L);
  for (std::size_t k = 0; k < L; ++k) {
    double s = w[L * q + k];
    for (std::size_t j = 0; j < q; ++j) s += w[k * q + j] * x[j];
    z[k] = s;
  }
  return z;
}

double naive_lr_loss(const ParameterVector& w, const Dataset& d) {
  const auto L = static_cast<std::size_t>(d.num_classes());
  double total = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto z = naive_lr_logits(w, d.row(i), L);
    const double mx = *std::max_element(z.begin(), z.end());
    double norm = 0.0;
    for (double v : z) norm += std::exp(v - mx);
    const double p = std::exp(z[static_cast<std::size_t>(d.label(i))] - mx) / norm;
    total += -std::log(std::max(p, kProbabilityFloor));
  }
  return total / static_cast<double>(d.size());
}

Batch full_batch(const Dataset& d) {
  Batch b;
  b.indices.resize(d.size());
  std::iota(b.indices.begin(), b.indices.end(), std::size_t{0});
  return b;
}

void check_gradient(const ModelSpec& spec, std::uint64_t seed) {
  RngStream rng(seed, "gradcheck");
  const Dataset d = random_dataset(6, spec.input_dim, static_cast<int>(spec.num_classes), rng);
  const Objective obj(d, spec);
  const Batch batch = full_batch(d);
  for (int point = 0; point < 20; ++point) {
    ParameterVector w = random_params(spec.param_count(), rng);
    const ParameterVector g = gradient(obj, w, batch);
    const double h = 1e-5;
    double num = 0.0;
    double den = 0.0;
    for (std::size_t j = 0; j < w.dim(); ++j) {
      const double keep = w[j];
      w[j] = keep + h;
      const double up = loss(obj, w);
      w[j] = keep - h;
      const double down = loss(obj, w);
      w[j] = keep;
      const double fd = (up - down) / (2.0 * h);
      num += (fd - g[j]) * (fd - g[j]);
      den += std::max(fd * fd, g[j] * g[j]);
    }
    CHECK(std::sqrt(num) <= 1e-4 * std::max(std::sqrt(den), 1e-8));
  }
}

}  // namespace

TEST_CASE("parameter count is a function of the spec") {
  CHECK(ModelSpec::logistic(784, 10).param_count() == 7850);
  CHECK(ModelSpec::mlp(30, 16, 2).param_count() == 31 * 16 + 17 * 2);
  CHECK_THROWS_AS(ModelSpec::mlp(30, 0, 2).validate(), ConfigError);
}

TEST_CASE("predict_proba examples") {
  const auto spec = ModelSpec::logistic(3, 4);
  const std::vector<double> x{0.2, -1.0, 3.0};
  const auto p = predict_proba(spec, ParameterVector(spec.param_count()), x);
  for (double v : p) CHECK(v == doctest::Approx(0.25).epsilon(1e-12));

  const auto bin = ModelSpec::logistic(1, 2);
  const auto half = predict_proba(bin, ParameterVector(bin.param_count()), std::vector<double>{1.0});
  CHECK(half[0] == doctest::Approx(0.5));
  CHECK(half[1] == doctest::Approx(0.5));

  RngStream rng(3, "shift");
  ParameterVector w = random_params(spec.param_count(), rng);
  const auto before = predict_proba(spec, w, x);
  for (std::size_t k = 0; k < 4; ++k) w[3 * 4 + k] += 5.0;  // every logit shifts by 5
  const auto after = predict_proba(spec, w, x);
  double sum = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(std::abs(before[k] - after[k]) <= 1e-12);
    CHECK(after[k] > 0.0);
    sum += after[k];
  }
  CHECK(std::abs(sum - 1.0) <= 1e-12);
  CHECK_THROWS_AS(predict_proba(spec, ParameterVector(3), x), DimensionError);
}

TEST_CASE("logits match a naive LR forward pass") {
  RngStream rng(9, "logits");
  const auto spec = ModelSpec::logistic(5, 3);
  const ParameterVector w = random_params(spec.param_count(), rng);
  const std::vector<double> x{0.0, 1.5, -0.5, 0.0, 2.0};
  const auto z = logits(spec, w, x);
  const auto expect = naive_lr_logits(w, x, 3);
  for (std::size_t k = 0; k < 3; ++k) CHECK(z[k] == doctest::Approx(expect[k]).epsilon(1e-12));
}

TEST_CASE("loss examples") {
  RngStream rng(11, "loss");
  const Dataset d = random_dataset(12, 4, 3, rng);
  const auto spec = ModelSpec::logistic(4, 3);
  const Objective obj(d, spec);
  CHECK(loss(obj, ParameterVector(spec.param_count())) == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  const ParameterVector w = random_params(spec.param_count(), rng);
  CHECK(std::abs(loss(obj, w) - naive_lr_loss(w, d)) <= 1e-12);

  // Huge correct-class biases on a single-class shard give near-certain predictions.
  const Dataset ones({0.0, 0.0}, 1, {1, 1}, 2);
  ParameterVector confident(ModelSpec::logistic(1, 2).param_count());
  confident[3] = 60.0;
  CHECK(loss(Objective(ones, ModelSpec::logistic(1, 2)), confident) <= 1e-9);

  // Clamping keeps the loss finite even for absurdly wrong predictions.
  ParameterVector wrong(ModelSpec::logistic(1, 2).param_count());
  wrong[2] = 1e6;
  const double l = loss(Objective(ones, ModelSpec::logistic(1, 2)), wrong);
  CHECK(std::isfinite(l));
  CHECK(l == doctest::Approx(-std::log(kProbabilityFloor)));
  CHECK_THROWS_AS(loss(Objective(ones, {}, ModelSpec::logistic(1, 2)), wrong), ConfigError);
}

TEST_CASE("gradient agrees with central finite differences") {
  check_gradient(ModelSpec::logistic(5, 3), 1);
  check_gradient(ModelSpec::mlp(4, 6, 3), 2);
}

TEST_CASE("duplicated instance batch equals the single-instance gradient") {
  RngStream rng(21, "dup");
  const Dataset d = random_dataset(5, 3, 2, rng);
  for (const auto& spec : {ModelSpec::logistic(3, 2), ModelSpec::mlp(3, 4, 2)}) {
    const Objective obj(d, spec);
    const ParameterVector w = random_params(spec.param_count(), rng);
    const auto one = gradient(obj, w, Batch{{2}});
    const auto many = gradient(obj, w, Batch{{2, 2, 2, 2}});
    for (std::size_t j = 0; j < w.dim(); ++j) CHECK(std::abs(one[j] - many[j]) <= 1e-12);
  }
}

TEST_CASE("local_update step semantics") {
  RngStream data_rng(5, "lu");
  const Dataset d = random_dataset(20, 3, 2, data_rng);
  const auto spec = ModelSpec::logistic(3, 2);
  const Objective obj(d, spec);
  const ParameterVector w0 = random_params(spec.param_count(), data_rng);

  RngStream zero_rng(1, "sgd");
  CHECK(local_update(obj, w0, 0.0, 3, 4, zero_rng).model == w0);

  RngStream a(7, "sgd");
  const auto two = local_update(obj, w0, 0.1, 2, 4, a);
  RngStream b(7, "sgd");
  ParameterVector manual = w0;
  for (int r = 0; r < 2; ++r) {
    const Batch batch = sample_batch(obj.shard(), 4, b);
    manual -= 0.1 * gradient(obj, manual, batch);
  }
  for (std::size_t j = 0; j < w0.dim(); ++j) CHECK(two.model[j] == doctest::Approx(manual[j]).epsilon(1e-14));

  CHECK_THROWS_AS(local_update(obj, w0, 0.1, 0, 4, a), ConfigError);
  CHECK_THROWS_AS(local_update(Objective(d, {}, spec), w0, 0.1, 1, 4, a), ConfigError);
}

TEST_CASE("single-coordinate local step") {
  // One instance, one feature with value 0, two classes: only the biases move.
  const Dataset d({0.0, 0.0}, 1, {0, 1}, 2);
  const auto spec = ModelSpec::logistic(1, 2);
  const Objective obj(d, std::vector<std::size_t>{0}, spec);
  RngStream rng(1, "sgd");
  const auto out = local_update(obj, ParameterVector(spec.param_count()), 0.1, 1, 1, rng);
  // Gradient on the biases is p - onehot = (0.5 - 1, 0.5).
  CHECK(out.model[0] == 0.0);
  CHECK(out.model[1] == 0.0);
  CHECK(out.model[2] == doctest::Approx(0.05));
  CHECK(out.model[3] == doctest::Approx(-0.05));
  CHECK(out.first_batch_loss == doctest::Approx(std::log(2.0)));
}

TEST_CASE("error_rate examples and tie rule") {
  RngStream rng(13, "err");
  const Dataset d = random_dataset(30, 2, 2, rng);
  const auto spec = ModelSpec::logistic(2, 2);
  std::size_t class0 = 0;
  for (int l : d.labels()) class0 += l == 0;
  const ParameterVector zero(spec.param_count());
  CHECK(error_rate(spec, zero, d) == doctest::Approx(static_cast<double>(30 - class0) / 30.0).epsilon(1e-15));

  const ParameterVector w = random_params(spec.param_count(), rng);
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const auto z = naive_lr_logits(w, d.row(i), 2);
    const std::size_t arg = z[1] > z[0] ? 1 : 0;
    wrong += arg != static_cast<std::size_t>(d.label(i));
  }
  CHECK(error_rate(spec, w, d) == static_cast<double>(wrong) / 30.0);
  const Evaluation ev = evaluate(spec, w, d);
  CHECK(ev.error == error_rate(spec, w, d));
  CHECK(ev.loss == doctest::Approx(dataset_loss(spec, w, d)).epsilon(1e-12));
  CHECK_THROWS_AS(error_rate(spec, w, Dataset()), ConfigError);
}

TEST_CASE("SGD on separable blobs reaches low training error") {
  RngStream data_rng(17, "blobs");
  const Dataset d = synth_blobs(2, 100, 2, 0.2, data_rng);
  for (const auto& spec : {ModelSpec::logistic(2, 2), ModelSpec::mlp(2, 8, 2)}) {
    const Objective obj(d, spec);
    RngStream init_rng(3, "init");
    ParameterVector w = init_params(spec, init_rng);
    RngStream sgd(4, "sgd");
    for (int t = 0; t < 200; ++t) w = local_update(obj, w, 0.5, 1, 16, sgd).model;
    CHECK(error_rate(spec, w, d) < 0.05);
  }
}

TEST_CASE("full-batch gradient descent decreases a convex loss") {
  RngStream rng(23, "gd");
  const Dataset d = random_dataset(40, 3, 3, rng);
  const auto spec = ModelSpec::logistic(3, 3);
  const Objective obj(d, spec);
  const Batch batch = full_batch(d);
  ParameterVector w(spec.param_count());
  double prev = loss(obj, w);
  for (int t = 0; t < 50; ++t) {
    w -= 0.05 * gradient(obj, w, batch);
    const double cur = loss(obj, w);
    CHECK(cur <= prev + 1e-15);
    prev = cur;
  }
}

TEST_CASE("gradient vanishes at the optimum of a toy set") {
  // Both labels appear at each input, so the optimum is finite.
  const Dataset d({0.0, 0.0, 1.0, 1.0}, 1, {0, 1, 1, 0}, 2);
  const auto spec = ModelSpec::logistic(1, 2);
  const Objective obj(d, spec);
  const Batch batch = full_batch(d);
  ParameterVector w(spec.param_count());
  for (int t = 0; t < 5000; ++t) w -= 1.0 * gradient(obj, w, batch);
  double norm = 0.0;
  for (double v : gradient(obj, w, batch)) norm += v * v;
  CHECK(std::sqrt(norm) < 1e-6);
}
