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

#include "fedpoison/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fedpoison {

std::string_view to_string(DefenseKind kind) noexcept {
  switch (kind) {
    case DefenseKind::kNone: return "none";
    case DefenseKind::kErr: return "err";
    case DefenseKind::kLfr: return "lfr";
    case DefenseKind::kUnion: return "union";
  }
  return "unknown";
}

DefenseKind parse_defense_kind(std::string_view name) {
  if (name == "none") return DefenseKind::kNone;
  if (name == "err" || name == "ERR") return DefenseKind::kErr;
  if (name == "lfr" || name == "LFR") return DefenseKind::kLfr;
  if (name == "union" || name == "Union") return DefenseKind::kUnion;
  throw ConfigError("unknown defense '" + std::string(name) + "'");
}

void DefenseSpec::validate(std::size_t m) const {
  if (kind == DefenseKind::kNone) return;
  if (c >= m) {
    throw ConfigError("defense: removal count " + std::to_string(c) + " must be below m=" + std::to_string(m));
  }
  if (validation == nullptr || validation->empty()) throw ConfigError("defense: needs a non-empty validation set");
}

std::vector<ImpactRecord> impact_scores(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                                        const ModelEvaluator& evaluate_model) {
  const std::size_t m = models.size();
  if (m < 2) throw ConfigError("impact_scores: needs at least two models");
  const Evaluation with_all = evaluate_model(aggregate(aggregator, models));
  const auto without = leave_one_out_aggregates(aggregator, models);
  std::vector<ImpactRecord> out(m);
  for (std::size_t i = 0; i < m; ++i) {
    const Evaluation e = evaluate_model(without[i]);
    out[i] = {i, with_all.error - e.error, with_all.loss - e.loss};
    if (!std::isfinite(out[i].error_impact) || !std::isfinite(out[i].loss_impact)) {
      throw std::domain_error("impact_scores: non-finite impact for device " + std::to_string(i));
    }
  }
  return out;
}

std::vector<ImpactRecord> impact_scores(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                                        const ModelSpec& model, const Dataset& validation) {
  if (validation.empty()) throw ConfigError("impact_scores: empty validation set");
  return impact_scores(models, aggregator,
                       [&](const ParameterVector& w) { return evaluate(model, w, validation); });
}

std::vector<std::size_t> largest_impacts(std::span<const ImpactRecord> impacts, std::size_t c, bool by_loss) {
  if (c > impacts.size()) throw ConfigError("largest_impacts: removal count exceeds model count");
  std::vector<std::size_t> order(impacts.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto key = [&](std::size_t i) { return by_loss ? impacts[i].loss_impact : impacts[i].error_impact; };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) > key(b); });
  std::vector<std::size_t> removed;
  removed.reserve(c);
  for (std::size_t k = 0; k < c; ++k) removed.push_back(impacts[order[k]].device);
  std::sort(removed.begin(), removed.end());
  return removed;
}

namespace {

DefenseResult split_survivors(std::span<const ParameterVector> models, std::vector<std::size_t> removed) {
  DefenseResult out;
  std::sort(removed.begin(), removed.end());
  removed.erase(std::unique(removed.begin(), removed.end()), removed.end());
  for (std::size_t i = 0; i < models.size(); ++i) {
    if (std::binary_search(removed.begin(), removed.end(), i)) continue;
    out.kept.push_back(i);
    out.survivors.push_back(models[i]);
  }
  out.removed = std::move(removed);
  return out;
}

}  // namespace

DefenseResult defend(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                     const DefenseSpec& spec, const ModelEvaluator& evaluate_model) {
  spec.validate(models.size());
  if (spec.kind == DefenseKind::kNone || spec.c == 0) {
    DefenseResult out = split_survivors(models, {});
    return out;
  }
  const auto impacts = impact_scores(models, aggregator, evaluate_model);
  std::vector<std::size_t> err;
  std::vector<std::size_t> lfr;
  if (spec.kind != DefenseKind::kLfr) err = largest_impacts(impacts, spec.c, false);
  if (spec.kind != DefenseKind::kErr) lfr = largest_impacts(impacts, spec.c, true);
  std::vector<std::size_t> removed = err;
  removed.insert(removed.end(), lfr.begin(), lfr.end());
  DefenseResult out = split_survivors(models, std::move(removed));
  out.err_removed = std::move(err);
  out.lfr_removed = std::move(lfr);
  return out;
}

DefenseResult defend(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                     const DefenseSpec& spec, const ModelSpec& model) {
  spec.validate(models.size());
  if (spec.kind == DefenseKind::kNone) return defend(models, aggregator, spec, ModelEvaluator{});
  const Dataset& validation = *spec.validation;
  return defend(models, aggregator, spec,
                [&](const ParameterVector& w) { return evaluate(model, w, validation); });
}

namespace {

DefenseSpec with_kind(DefenseSpec spec, DefenseKind kind) {
  spec.kind = kind;
  return spec;
}

}  // namespace

DefenseResult defend_err(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                         const DefenseSpec& spec, const ModelSpec& model) {
  return defend(models, aggregator, with_kind(spec, DefenseKind::kErr), model);
}

DefenseResult defend_lfr(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                         const DefenseSpec& spec, const ModelSpec& model) {
  return defend(models, aggregator, with_kind(spec, DefenseKind::kLfr), model);
}

DefenseResult defend_union(std::span<const ParameterVector> models, const AggregatorSpec& aggregator,
                           const DefenseSpec& spec, const ModelSpec& model) {
  return defend(models, aggregator, with_kind(spec, DefenseKind::kUnion), model);
}

}  // namespace fedpoison
