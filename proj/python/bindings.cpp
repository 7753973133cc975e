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


#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fedpoison/aggregation.hpp"
#include "fedpoison/core.hpp"
#include "fedpoison/harness.hpp"

namespace py = pybind11;
using namespace fedpoison;

namespace {

using Matrix = py::array_t<double, py::array::c_style | py::array::forcecast>;

// Rows of a 2-D array become one model each.
std::vector<ParameterVector> to_models(const Matrix& array) {
  if (array.ndim() != 2) throw DimensionError("models must be a 2-D array (m x d)");
  const auto rows = static_cast<std::size_t>(array.shape(0));
  const auto cols = static_cast<std::size_t>(array.shape(1));
  const double* data = array.data();
  std::vector<ParameterVector> models;
  models.reserve(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    models.emplace_back(std::vector<double>(data + i * cols, data + (i + 1) * cols));
  }
  return models;
}

py::array_t<double> to_array(const ParameterVector& v) {
  py::array_t<double> out(static_cast<py::ssize_t>(v.dim()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

AggregatorSpec make_spec(const std::string& rule, std::size_t c, std::size_t beta, std::size_t theta,
                         std::size_t gamma) {
  return {parse_aggregation_rule(rule), c, beta, theta, gamma};
}

py::dict metrics_columns(const std::vector<MetricsRecord>& records) {
  std::vector<double> loss, test, validation, lambda;
  std::vector<bool> active;
  std::vector<std::vector<std::size_t>> removed;
  for (const auto& r : records) {
    loss.push_back(r.train_loss);
    test.push_back(r.test_error);
    validation.push_back(r.validation_error);
    active.push_back(r.attack_active);
    lambda.push_back(r.lambda.value_or(std::numeric_limits<double>::quiet_NaN()));
    removed.push_back(r.removed);
  }
  py::dict out;
  out["train_loss"] = loss;
  out["test_error"] = test;
  out["validation_error"] = validation;
  out["attack_active"] = active;
  out["lambda"] = lambda;
  out["removed"] = removed;
  return out;
}

}  // namespace

PYBIND11_MODULE(_fedpoison, m) {
  m.doc() = "Robust aggregation rules, poisoning attacks and defenses for federated learning";

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DimensionError>(m, "DimensionError", PyExc_ValueError);

  m.def("mean", [](const Matrix& models) { return to_array(mean(to_models(models))); }, py::arg("models"));
  m.def(
      "krum",
      [](const Matrix& models, std::size_t c) {
        auto pick = krum(to_models(models), c);
        return py::make_tuple(pick.index, to_array(pick.model));
      },
      py::arg("models"), py::arg("c"), "Returns (index, model) of the Krum pick.");
  m.def("krum_scores", [](const Matrix& models, std::size_t c) { return krum_scores(to_models(models), c); },
        py::arg("models"), py::arg("c"));
  m.def("trimmed_mean", [](const Matrix& models, std::size_t beta) {
        return to_array(trimmed_mean(to_models(models), beta));
      }, py::arg("models"), py::arg("beta"));
  m.def("median", [](const Matrix& models) { return to_array(median(to_models(models))); }, py::arg("models"));
  m.def("bulyan", [](const Matrix& models, std::size_t c, std::size_t theta, std::size_t gamma) {
        return to_array(bulyan(to_models(models), c, theta, gamma));
      }, py::arg("models"), py::arg("c"), py::arg("theta"), py::arg("gamma"));
  m.def(
      "aggregate",
      [](const std::string& rule, const Matrix& models, std::size_t c, std::size_t beta, std::size_t theta,
         std::size_t gamma) { return to_array(aggregate(make_spec(rule, c, beta, theta, gamma), to_models(models))); },
      py::arg("rule"), py::arg("models"), py::arg("c") = 0, py::arg("beta") = 0, py::arg("theta") = 0,
      py::arg("gamma") = 0);

  m.def(
      "config_hash",
      [](const std::string& text) { return config_hash(apply_config(ExperimentConfig{}, parse_config_text(text))); },
      py::arg("config_text") = "");
  m.def(
      "resolve_config",
      [](const std::string& text) { return to_config_map(apply_config(ExperimentConfig{}, parse_config_text(text))); },
      py::arg("config_text") = "", "Every config key with its effective value.");
  m.def(
      "run_experiment",
      [](const std::string& text, std::uint64_t seed) {
        auto config = apply_config(ExperimentConfig{}, parse_config_text(text));
        config.seed = seed;
        config.validate();
        ExperimentResult result;
        {
          py::gil_scoped_release release;
          result = run_experiment(config);
        }
        py::list trials;
        for (const auto& t : result.trials) {
          py::dict d = metrics_columns(t.metrics);
          d["seed"] = t.seed;
          d["final_iteration"] = t.final_iteration;
          d["final_test_error"] = t.final_test_error;
          d["final_validation_error"] = t.final_validation_error;
          trials.append(d);
        }
        py::dict summary;
        summary["config_hash"] = result.summary.config_hash;
        summary["trials"] = result.summary.trials;
        summary["mean_final_test_error"] = result.summary.mean_final_test_error;
        summary["stddev_final_test_error"] = result.summary.stddev_final_test_error;
        summary["mean_final_validation_error"] = result.summary.mean_final_validation_error;
        return py::make_tuple(summary, trials);
      },
      py::arg("config_text"), py::arg("seed"),
      "Runs every trial of the key = value config. Returns (summary, per-trial metric columns).");
}
