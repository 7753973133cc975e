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
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "fedpoison/aggregation.hpp"
#include "fedpoison/core.hpp"
#include "fedpoison/data.hpp"
#include "fedpoison/models.hpp"

namespace fedpoison {

enum class DefenseKind { kNone, kErr, kLfr, kUnion };

std::string_view to_string(DefenseKind kind) noexcept;
DefenseKind parse_defense_kind(std::string_view name);

/// Removal count and the master's validation data. `validation` is borrowed
/// and must outlive every call that uses the spec.
struct DefenseSpec {
  DefenseKind kind = DefenseKind::kNone;
  std::size_t c = 0;
  const Dataset* validation = nullptr;

  /// Throws ConfigError unless c < m and, for an active defense, the
  /// validation set is present and non-empty.
  void validate(std::size_t m) const;
};

struct ImpactRecord {
  std::size_t device = 0;
  double error_impact = 0.0;  // E_A - E_B
  double loss_impact = 0.0;   // L_A - L_B
};

/// Maps a global model to its (error rate, loss) on the validation data.
using ModelEvaluator = std::function<Evaluation(const ParameterVector&)>;

/// Leave-one-out impact of every model: A aggregates all models, B_i all but
/// model i. Records come back in device order. Requires m >= 2; the
/// aggregator must accept m-1 models.
std::vector<ImpactRecord> impact_scores(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                                        const ModelEvaluator& evaluate_model);
std::vector<ImpactRecord> impact_scores(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                                        const ModelSpec& model, const Dataset& validation);

/// Devices with the c largest impacts, ascending by index. Among equal
/// impacts the lower index is removed first.
std::vector<std::size_t> largest_impacts(std::span<const ImpactRecord> impacts, std::size_t c, bool by_loss);

struct DefenseResult {
  std::vector<ParameterVector> survivors;  // in device order
  std::vector<std::size_t> kept;           // ascending
  std::vector<std::size_t> removed;        // ascending
  std::vector<std::size_t> err_removed;    // ERR's removal set (ERR and Union)
  std::vector<std::size_t> lfr_removed;    // LFR's removal set (LFR and Union)
};

/// Applies spec.kind. The filter reads only the models and the validation
/// data; compromised marks never reach it. kNone keeps every model.
DefenseResult defend(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                     const DefenseSpec& spec, const ModelEvaluator& evaluate_model);
DefenseResult defend(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                     const DefenseSpec& spec, const ModelSpec& model);

/// Removes the c models with the largest error-rate impact.
DefenseResult defend_err(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                         const DefenseSpec& spec, const ModelSpec& model);
/// Removes the c models with the largest loss impact.
DefenseResult defend_lfr(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                         const DefenseSpec& spec, const ModelSpec& model);
/// Removes every model that ERR or LFR removes: between c and 2c models.
DefenseResult defend_union(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                           const DefenseSpec& spec, const ModelSpec& model);

}  // namespace fedpoison
