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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedpoison/aggregation.hpp"
#include "fedpoison/attacks.hpp"
#include "fedpoison/core.hpp"
#include "fedpoison/data.hpp"
#include "fedpoison/defenses.hpp"
#include "fedpoison/models.hpp"

namespace fedpoison {

/// Which poisoning the compromised devices perform. kKrum and kBulyan run the
/// lambda search; kTrimmedMean, kMedian and kMean run the coordinate-wise
/// interval crafting against that rule.
enum class AttackKind { kNone, kGaussian, kLabelFlip, kKrum, kBulyan, kTrimmedMean, kMedian, kMean };

std::string_view to_string(AttackKind kind) noexcept;
AttackKind parse_attack_kind(std::string_view name);

enum class SelectionStrategy { kLast, kBestValidation };

std::string_view to_string(SelectionStrategy strategy) noexcept;
SelectionStrategy parse_selection_strategy(std::string_view name);

/// Where the instance pool comes from and how it is split. The held-out part
/// holds test_count + validation_count rows; validation rows come first.
struct DataConfig {
  std::string dataset = "idx";  // idx | csv | blobs
  std::string images = "data/mnist5k/images-idx3-ubyte";
  std::string labels = "data/mnist5k/labels-idx1-ubyte";
  std::string csv;
  std::string csv_label = "label";
  int num_classes = 10;
  std::size_t train_count = 0;  // 0 keeps every non-held-out row
  std::size_t test_count = 900;
  std::size_t validation_count = 100;
  std::size_t blob_per_class = 200;
  std::size_t blob_features = 5;
  double blob_spread = 0.3;
};

struct ExperimentConfig {
  DataConfig data;
  std::size_t m = 100;
  std::size_t c = 20;
  double p = 0.5;
  double alpha = 1.0;
  std::size_t iterations = 500;
  std::size_t local_rounds = 1;
  std::size_t batch_size = 8;
  std::size_t devices_per_iteration = 0;  // 0 samples all m devices
  double poison_fraction = 1.0;

  ModelKind model = ModelKind::kLogisticRegression;
  std::size_t hidden = 32;

  AggregationRule aggregator = AggregationRule::kMean;
  std::size_t beta = 0;   // 0 means beta = c
  std::size_t theta = 0;  // 0 means theta = m - 2c
  std::size_t gamma = 0;  // 0 means gamma = theta - 2c

  AttackKind attack = AttackKind::kNone;
  KnowledgeMode knowledge = KnowledgeMode::kFull;
  AttackObjective objective = AttackObjective::kDirectedDeviation;
  double epsilon = 0.01;
  double b = 2.0;
  double lambda_threshold = 1e-5;

  DefenseKind defense = DefenseKind::kNone;
  std::size_t defense_c = 0;  // 0 means c

  SelectionStrategy selection = SelectionStrategy::kLast;
  std::uint64_t seed = 0;
  std::size_t trials = 1;
  std::size_t threads = 0;  // 0 uses the hardware concurrency

  [[nodiscard]] std::size_t sampled() const noexcept { return devices_per_iteration == 0 ? m : devices_per_iteration; }
  [[nodiscard]] std::size_t effective_beta() const noexcept { return beta == 0 ? c : beta; }
  [[nodiscard]] std::size_t effective_theta() const noexcept;
  [[nodiscard]] std::size_t effective_gamma() const noexcept;
  [[nodiscard]] std::size_t effective_defense_c() const noexcept { return defense_c == 0 ? c : defense_c; }
  [[nodiscard]] AggregatorSpec aggregator_spec() const;
  /// The rule the attacker crafts against, with this config's c, beta,
  /// theta and gamma.
  [[nodiscard]] AggregatorSpec attack_target_spec() const;
  [[nodiscard]] AttackSpec attack_spec() const;
  /// Throws ConfigError on any inconsistent field.
  void validate() const;
};

/// Flat key = value configuration. Keys are the ExperimentConfig field names;
/// data fields use their DataConfig names directly.
using ConfigMap = std::map<std::string, std::string>;

/// Parses "key = value" lines; '#' starts a comment. Throws ConfigError on a
/// line without '=' or a repeated key.
ConfigMap parse_config_text(std::string_view text);
ConfigMap read_config_file(const std::filesystem::path& path);
/// Applies every entry over `base`; unknown keys and malformed values throw
/// ConfigError.
ExperimentConfig apply_config(ExperimentConfig base, const ConfigMap& entries);
/// Canonical rendering of every field.
ConfigMap to_config_map(const ExperimentConfig& config);
/// FNV-1a over the sorted "key=value" lines of to_config_map, as 16 hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Train / test / validation rows of one trial.
struct ExperimentData {
  Dataset train;
  Dataset test;
  Dataset validation;
};

/// Loads (or, for blobs, synthesizes with `seed`) the instance pool.
Dataset load_pool(const DataConfig& data, std::uint64_t seed);
ExperimentData split_pool(const Dataset& pool, const DataConfig& data, RngStream& rng);

struct MetricsRecord {
  std::size_t iteration = 0;
  double train_loss = 0.0;
  double test_error = 0.0;
  double validation_error = 0.0;
  bool attack_active = false;
  std::optional<double> lambda;       // set when a Krum-style search succeeded
  std::vector<std::size_t> removed;   // device ids removed by the defense
  std::vector<std::size_t> err_removed;
  std::vector<std::size_t> lfr_removed;
};

/// Uniform k-subset of [0, m), ascending. k = m returns every device without
/// drawing from `rng`.
std::vector<std::size_t> sample_devices(std::size_t m, std::size_t k, RngStream& rng);

/// Exactly round(f * T) distinct iterations, ascending.
std::vector<std::size_t> poison_schedule(std::size_t iterations, double f, RngStream& rng);

struct HistoryEntry {
  ParameterVector model;
  double validation_error = 0.0;
};

/// Last: the final entry. BestValidation: the lowest validation error, ties
/// to the earliest entry. Throws ConfigError on an empty history.
std::size_t select_final_index(std::span<const HistoryEntry> history, SelectionStrategy strategy);
ParameterVector select_final_model(std::span<const HistoryEntry> history, SelectionStrategy strategy);

/// What a custom crafter sees on a poisoned iteration.
struct CraftContext {
  const ParameterVector& w_re;
  std::span<const ParameterVector> before_attack;  // sampled devices, sampled order
  std::span<const std::size_t> compromised;        // positions into before_attack
  std::size_t iteration;
};
/// Returns one model per entry of ctx.compromised.
using Crafter = std::function<std::vector<ParameterVector>(const CraftContext& ctx)>;

/// One trial's mutable state: global model, streams and per-device shards.
class TrialState {
 public:
  TrialState(const ExperimentConfig& config, const ExperimentData& data, std::uint64_t trial_seed);

  [[nodiscard]] const ParameterVector& global() const noexcept { return global_; }
  void set_global(ParameterVector w) { global_ = std::move(w); }
  [[nodiscard]] const ModelSpec& model_spec() const noexcept { return spec_; }
  [[nodiscard]] const std::vector<std::size_t>& compromised() const noexcept { return compromised_; }
  [[nodiscard]] const std::vector<bool>& poisoned() const noexcept { return poisoned_; }
  [[nodiscard]] const ExperimentData& data() const noexcept { return *data_; }
  [[nodiscard]] const std::vector<std::vector<std::size_t>>& shards() const noexcept { return shards_; }
  /// Overrides the configured attack on poisoned iterations.
  void set_crafter(Crafter crafter) { crafter_ = std::move(crafter); }

 private:
  friend MetricsRecord run_iteration(TrialState& state, const ExperimentConfig& config, std::size_t iteration);

  const ExperimentData* data_;
  ModelSpec spec_;
  ParameterVector global_;
  std::vector<std::vector<std::size_t>> shards_;
  std::vector<Objective> honest_;
  std::shared_ptr<const Dataset> flipped_train_;  // label-flipped copy of the training rows
  std::vector<std::optional<Objective>> flipped_;  // per device; set for compromised devices
  std::vector<std::size_t> compromised_;
  std::vector<bool> is_compromised_;
  std::vector<bool> poisoned_;
  std::vector<RngStream> sgd_streams_;
  std::vector<RngStream> flip_streams_;
  RngStream sample_rng_;
  RngStream attack_rng_;
  Crafter crafter_;
};

/// Steps I-III for one iteration: broadcast, honest local updates on the
/// sampled devices, crafting on poisoned iterations, defense, aggregation.
/// Updates state.global(). Throws ConfigError when the defense leaves fewer
/// models than the aggregator needs.
MetricsRecord run_iteration(TrialState& state, const ExperimentConfig& config, std::size_t iteration);

struct TrialResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRecord> metrics;
  ParameterVector final_model;
  std::size_t final_iteration = 0;  // 0-based index of the selected iterate
  double final_test_error = 0.0;
  double final_validation_error = 0.0;
};

struct ExperimentSummary {
  std::string config_hash;
  std::size_t trials = 0;
  double mean_final_test_error = 0.0;
  double stddev_final_test_error = 0.0;
  double mean_final_validation_error = 0.0;
};

struct ExperimentResult {
  std::vector<TrialResult> trials;
  ExperimentSummary summary;
};

std::uint64_t trial_seed(std::uint64_t master_seed, std::size_t trial) noexcept;

/// Runs one trial on an already split dataset.
TrialResult run_trial(const ExperimentConfig& config, const ExperimentData& data, std::uint64_t seed);
/// Runs config.trials trials, each with its own split drawn from `pool`.
ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& pool);
/// Loads the pool named by config.data, then runs the trials.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Columns: iteration,train_loss,test_error,validation_error,attack_active,
/// lambda,removed. Doubles use 17 significant digits; `removed` joins device
/// ids with ';'.
void write_metrics_csv(std::span<const MetricsRecord> records, const std::filesystem::path& path);
/// Columns: config_hash,trials,selection,mean_final_test_error,
/// stddev_final_test_error,mean_final_validation_error.
void write_summary_csv(const ExperimentConfig& config, const ExperimentSummary& summary,
                       const std::filesystem::path& path);
/// Writes trial_<i>.csv for every trial plus summary.csv into `dir`.
void write_experiment(const ExperimentConfig& config, const ExperimentResult& result,
                      const std::filesystem::path& dir);

}  // namespace fedpoison
