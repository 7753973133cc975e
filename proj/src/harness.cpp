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

#include "fedpoison/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

namespace fedpoison {

std::string_view to_string(AttackKind kind) noexcept {
  switch (kind) {
    case AttackKind::kNone: return "none";
    case AttackKind::kGaussian: return "gaussian";
    case AttackKind::kLabelFlip: return "labelflip";
    case AttackKind::kKrum: return "krum";
    case AttackKind::kBulyan: return "bulyan";
    case AttackKind::kTrimmedMean: return "trimmed_mean";
    case AttackKind::kMedian: return "median";
    case AttackKind::kMean: return "mean";
  }
  return "unknown";
}

AttackKind parse_attack_kind(std::string_view name) {
  if (name == "none") return AttackKind::kNone;
  if (name == "gaussian") return AttackKind::kGaussian;
  if (name == "labelflip" || name == "label_flip") return AttackKind::kLabelFlip;
  if (name == "krum") return AttackKind::kKrum;
  if (name == "bulyan") return AttackKind::kBulyan;
  if (name == "trimmed_mean" || name == "trim" || name == "trimmedmean") return AttackKind::kTrimmedMean;
  if (name == "median") return AttackKind::kMedian;
  if (name == "mean") return AttackKind::kMean;
  throw ConfigError("unknown attack '" + std::string(name) + "'");
}

std::string_view to_string(SelectionStrategy strategy) noexcept {
  return strategy == SelectionStrategy::kLast ? "last" : "best_validation";
}

SelectionStrategy parse_selection_strategy(std::string_view name) {
  if (name == "last") return SelectionStrategy::kLast;
  if (name == "best_validation" || name == "best") return SelectionStrategy::kBestValidation;
  throw ConfigError("unknown selection strategy '" + std::string(name) + "'");
}

// ---------------------------------------------------------------------------
// ExperimentConfig

std::size_t ExperimentConfig::effective_theta() const noexcept {
  if (theta != 0) return theta;
  return m > 2 * c ? m - 2 * c : 0;
}

std::size_t ExperimentConfig::effective_gamma() const noexcept {
  if (gamma != 0) return gamma;
  const std::size_t t = effective_theta();
  return t > 2 * c ? t - 2 * c : 0;
}

namespace {

AggregatorSpec spec_for(AggregationRule rule, const ExperimentConfig& config) {
  switch (rule) {
    case AggregationRule::kMean: return AggregatorSpec::mean();
    case AggregationRule::kKrum: return AggregatorSpec::krum(config.c);
    case AggregationRule::kTrimmedMean: return AggregatorSpec::trimmed_mean(config.effective_beta());
    case AggregationRule::kMedian: return AggregatorSpec::median();
    case AggregationRule::kBulyan:
      return AggregatorSpec::bulyan(config.c, config.effective_theta(), config.effective_gamma());
  }
  return AggregatorSpec::mean();
}

std::optional<AggregationRule> attack_rule(AttackKind kind) {
  switch (kind) {
    case AttackKind::kKrum: return AggregationRule::kKrum;
    case AttackKind::kBulyan: return AggregationRule::kBulyan;
    case AttackKind::kTrimmedMean: return AggregationRule::kTrimmedMean;
    case AttackKind::kMedian: return AggregationRule::kMedian;
    case AttackKind::kMean: return AggregationRule::kMean;
    default: return std::nullopt;
  }
}

bool is_krum_style(AttackKind kind) { return kind == AttackKind::kKrum || kind == AttackKind::kBulyan; }

}  // namespace

AggregatorSpec ExperimentConfig::aggregator_spec() const { return spec_for(aggregator, *this); }

AggregatorSpec ExperimentConfig::attack_target_spec() const {
  const auto rule = attack_rule(attack);
  if (!rule) throw ConfigError("attack '" + std::string(to_string(attack)) + "' has no target rule");
  return spec_for(*rule, *this);
}

AttackSpec ExperimentConfig::attack_spec() const {
  AttackSpec spec;
  if (const auto rule = attack_rule(attack)) spec.target = *rule;
  spec.objective = objective;
  spec.epsilon = epsilon;
  spec.b = b;
  spec.lambda_threshold = lambda_threshold;
  spec.beta = effective_beta();
  return spec;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& what) { throw ConfigError("config: " + what); };
  if (m == 0) fail("m must be positive");
  if (c > 0 && 2 * c >= m) fail("c must be below m/2");
  const std::size_t k = sampled();
  if (k > m) fail("devices_per_iteration exceeds m");
  if (!(p >= 0.0 && p <= 1.0)) fail("p must lie in [0, 1]");
  if (!(alpha >= 0.0)) fail("alpha must be non-negative");
  if (iterations == 0) fail("iterations must be positive");
  if (local_rounds == 0) fail("local_rounds must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (!(poison_fraction >= 0.0 && poison_fraction <= 1.0)) fail("poison_fraction must lie in [0, 1]");
  if (data.num_classes < 2) fail("num_classes must be at least 2");
  // A single device holds the whole training set, so no partition is needed.
  if (m > 1 && m % static_cast<std::size_t>(data.num_classes) != 0) fail("m must be a multiple of num_classes");
  if (data.validation_count == 0) fail("validation_count must be positive");
  if (data.test_count == 0) fail("test_count must be positive");
  if (trials == 0) fail("trials must be positive");
  if (model == ModelKind::kMlp && hidden == 0) fail("hidden must be positive for the MLP");

  const AggregatorSpec agg = aggregator_spec();
  agg.validate(k);
  if (defense != DefenseKind::kNone) {
    const std::size_t dc = effective_defense_c();
    const std::size_t worst = defense == DefenseKind::kUnion ? 2 * dc : dc;
    if (worst >= k) fail("defense would remove every model");
    agg.validate(k - 1);
    agg.validate(k - worst);
  }
  if (const auto rule = attack_rule(attack)) {
    attack_target_spec().validate(k);
    attack_spec().validate();
    if (is_krum_style(attack) && knowledge == KnowledgeMode::kPartial && c > 0 && c < 3 && k == m) {
      fail("the partial-knowledge Krum attack needs c >= 3");
    }
    if (!is_krum_style(attack) && knowledge == KnowledgeMode::kPartial &&
        objective == AttackObjective::kDeviation) {
      fail("the deviation objective for coordinate-wise crafting needs full knowledge");
    }
  }
  if (epsilon <= 0.0 || b <= 1.0 || lambda_threshold <= 0.0) fail("epsilon > 0, b > 1 and lambda_threshold > 0");
}

// ---------------------------------------------------------------------------
// Config text

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* begin = value.data();
  const char* end = begin + value.size();
  if constexpr (std::is_floating_point_v<T>) {
    const auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
      throw ConfigError("config: '" + key + "' expects a number, got '" + value + "'");
    }
  } else {
    const auto [ptr, ec] = std::from_chars(begin, end, out);
    if (ec != std::errc() || ptr != end) {
      throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + value + "'");
    }
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  const char* key;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field number_field(const char* key, T ExperimentConfig::*member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.*member);
            } else {
              return std::to_string(c.*member);
            }
          }};
}

template <typename T>
Field data_number_field(const char* key, T DataConfig::*member) {
  return {key,
          [key, member](ExperimentConfig& c, const std::string& v) { c.data.*member = parse_number<T>(key, v); },
          [member](const ExperimentConfig& c) {
            if constexpr (std::is_floating_point_v<T>) {
              return format_double(c.data.*member);
            } else {
              return std::to_string(c.data.*member);
            }
          }};
}

Field data_string_field(const char* key, std::string DataConfig::*member) {
  return {key, [member](ExperimentConfig& c, const std::string& v) { c.data.*member = v; },
          [member](const ExperimentConfig& c) { return c.data.*member; }};
}

template <typename E, typename Parse>
Field enum_field(const char* key, E ExperimentConfig::*member, Parse parse) {
  return {key, [member, parse](ExperimentConfig& c, const std::string& v) { c.*member = parse(v); },
          [member](const ExperimentConfig& c) { return std::string(to_string(c.*member)); }};
}

std::string_view model_name(ModelKind kind) { return kind == ModelKind::kMlp ? "mlp" : "lr"; }

ModelKind parse_model_kind(std::string_view name) {
  if (name == "lr" || name == "logistic") return ModelKind::kLogisticRegression;
  if (name == "mlp") return ModelKind::kMlp;
  throw ConfigError("unknown model '" + std::string(name) + "'");
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(data_string_field("dataset", &DataConfig::dataset));
    f.push_back(data_string_field("images", &DataConfig::images));
    f.push_back(data_string_field("labels", &DataConfig::labels));
    f.push_back(data_string_field("csv", &DataConfig::csv));
    f.push_back(data_string_field("csv_label", &DataConfig::csv_label));
    f.push_back(data_number_field("num_classes", &DataConfig::num_classes));
    f.push_back(data_number_field("train_count", &DataConfig::train_count));
    f.push_back(data_number_field("test_count", &DataConfig::test_count));
    f.push_back(data_number_field("validation_count", &DataConfig::validation_count));
    f.push_back(data_number_field("blob_per_class", &DataConfig::blob_per_class));
    f.push_back(data_number_field("blob_features", &DataConfig::blob_features));
    f.push_back(data_number_field("blob_spread", &DataConfig::blob_spread));
    f.push_back(number_field("m", &ExperimentConfig::m));
    f.push_back(number_field("c", &ExperimentConfig::c));
    f.push_back(number_field("p", &ExperimentConfig::p));
    f.push_back(number_field("alpha", &ExperimentConfig::alpha));
    f.push_back(number_field("iterations", &ExperimentConfig::iterations));
    f.push_back(number_field("local_rounds", &ExperimentConfig::local_rounds));
    f.push_back(number_field("batch_size", &ExperimentConfig::batch_size));
    f.push_back(number_field("devices_per_iteration", &ExperimentConfig::devices_per_iteration));
    f.push_back(number_field("poison_fraction", &ExperimentConfig::poison_fraction));
    f.push_back({"model", [](ExperimentConfig& c, const std::string& v) { c.model = parse_model_kind(v); },
                 [](const ExperimentConfig& c) { return std::string(model_name(c.model)); }});
    f.push_back(number_field("hidden", &ExperimentConfig::hidden));
    f.push_back(enum_field("aggregator", &ExperimentConfig::aggregator,
                           [](const std::string& v) { return parse_aggregation_rule(v); }));
    f.push_back(number_field("beta", &ExperimentConfig::beta));
    f.push_back(number_field("theta", &ExperimentConfig::theta));
    f.push_back(number_field("gamma", &ExperimentConfig::gamma));
    f.push_back(enum_field("attack", &ExperimentConfig::attack,
                           [](const std::string& v) { return parse_attack_kind(v); }));
    f.push_back(enum_field("knowledge", &ExperimentConfig::knowledge,
                           [](const std::string& v) { return parse_knowledge_mode(v); }));
    f.push_back(enum_field("objective", &ExperimentConfig::objective,
                           [](const std::string& v) { return parse_attack_objective(v); }));
    f.push_back(number_field("epsilon", &ExperimentConfig::epsilon));
    f.push_back(number_field("b", &ExperimentConfig::b));
    f.push_back(number_field("lambda_threshold", &ExperimentConfig::lambda_threshold));
    f.push_back(enum_field("defense", &ExperimentConfig::defense,
                           [](const std::string& v) { return parse_defense_kind(v); }));
    f.push_back(number_field("defense_c", &ExperimentConfig::defense_c));
    f.push_back(enum_field("selection", &ExperimentConfig::selection,
                           [](const std::string& v) { return parse_selection_strategy(v); }));
    f.push_back(number_field("seed", &ExperimentConfig::seed));
    f.push_back(number_field("trials", &ExperimentConfig::trials));
    f.push_back(number_field("threads", &ExperimentConfig::threads));
    return f;
  }();
  return table;
}

// Fields that change how a run executes but not what it computes.
bool excluded_from_hash(std::string_view key) { return key == "threads"; }

}  // namespace

ConfigMap parse_config_text(std::string_view text) {
  ConfigMap out;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!out.emplace(key, value).second) {
      throw ConfigError("config line " + std::to_string(line_no) + ": repeated key '" + key + "'");
    }
  }
  return out;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config_text(buffer.str());
}

ExperimentConfig apply_config(ExperimentConfig base, const ConfigMap& entries) {
  for (const auto& [key, value] : entries) {
    const auto& table = fields();
    const auto it = std::find_if(table.begin(), table.end(), [&](const Field& f) { return key == f.key; });
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->set(base, value);
  }
  return base;
}

ConfigMap to_config_map(const ExperimentConfig& config) {
  ConfigMap out;
  for (const auto& f : fields()) out.emplace(f.key, f.get(config));
  return out;
}

std::string config_hash(const ExperimentConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& [key, value] : to_config_map(config)) {
    if (excluded_from_hash(key)) continue;
    const std::string line = key + "=" + value + "\n";
    for (unsigned char ch : line) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------
// Data

Dataset load_pool(const DataConfig& data, std::uint64_t seed) {
  if (data.dataset == "idx") return load_idx(data.images, data.labels, data.num_classes);
  if (data.dataset == "csv") {
    CsvOptions options;
    options.label_column = data.csv_label;
    options.num_classes = data.num_classes;
    return load_csv(data.csv, options);
  }
  if (data.dataset == "blobs") {
    RngStream rng(seed, "data/blobs");
    return synth_blobs(data.num_classes, data.blob_per_class, data.blob_features, data.blob_spread, rng);
  }
  throw ConfigError("unknown dataset '" + data.dataset + "' (expected idx, csv or blobs)");
}

ExperimentData split_pool(const Dataset& pool, const DataConfig& data, RngStream& rng) {
  const std::size_t held_out = data.test_count + data.validation_count;
  if (held_out >= pool.size()) {
    throw ConfigError("split: " + std::to_string(held_out) + " held-out rows leave no training data (pool has " +
                      std::to_string(pool.size()) + ")");
  }
  auto split = train_test_split(pool, held_out, rng);
  ExperimentData out;
  std::vector<std::size_t> idx(held_out);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::span<const std::size_t> all(idx);
  out.validation = split.test.subset(all.first(data.validation_count));
  out.test = split.test.subset(all.subspan(data.validation_count));
  if (data.train_count != 0) {
    if (data.train_count > split.train.size()) {
      throw ConfigError("split: train_count " + std::to_string(data.train_count) + " exceeds the " +
                        std::to_string(split.train.size()) + " available rows");
    }
    std::vector<std::size_t> tr(data.train_count);
    std::iota(tr.begin(), tr.end(), std::size_t{0});
    out.train = split.train.subset(tr);
  } else {
    out.train = std::move(split.train);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sampling, schedule, selection

std::vector<std::size_t> sample_devices(std::size_t m, std::size_t k, RngStream& rng) {
  if (k == 0 || k > m) throw ConfigError("sample_devices: need 1 <= k <= m");
  if (k == m) {
    std::vector<std::size_t> all(m);
    std::iota(all.begin(), all.end(), std::size_t{0});
    return all;
  }
  auto out = sample_without_replacement(m, k, rng);
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> poison_schedule(std::size_t iterations, double f, RngStream& rng) {
  if (!(f >= 0.0 && f <= 1.0)) throw ConfigError("poison_schedule: f must lie in [0, 1]");
  const auto count = static_cast<std::size_t>(std::llround(f * static_cast<double>(iterations)));
  auto out = sample_without_replacement(iterations, std::min(count, iterations), rng);
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t select_final_index(std::span<const HistoryEntry> history, SelectionStrategy strategy) {
  if (history.empty()) throw ConfigError("select_final_model: empty history");
  if (strategy == SelectionStrategy::kLast) return history.size() - 1;
  std::size_t best = 0;
  for (std::size_t i = 1; i < history.size(); ++i) {
    if (history[i].validation_error < history[best].validation_error) best = i;
  }
  return best;
}

ParameterVector select_final_model(std::span<const HistoryEntry> history, SelectionStrategy strategy) {
  return history[select_final_index(history, strategy)].model;
}

// ---------------------------------------------------------------------------
// Trial

TrialState::TrialState(const ExperimentConfig& config, const ExperimentData& data, std::uint64_t seed)
    : data_(&data), sample_rng_(seed, "sample"), attack_rng_(seed, "attack") {
  config.validate();
  if (data.train.num_classes() != config.data.num_classes) {
    throw ConfigError("trial: dataset has " + std::to_string(data.train.num_classes()) +
                      " classes, config says " + std::to_string(config.data.num_classes));
  }
  const std::size_t q = data.train.num_features();
  spec_ = config.model == ModelKind::kMlp ? ModelSpec::mlp(q, config.hidden, data.train.num_classes())
                                          : ModelSpec::logistic(q, data.train.num_classes());
  RngStream init(seed, "init");
  global_ = init_params(spec_, init);

  RngStream partition_rng(seed, "partition");
  if (config.m == 1) {
    shards_.assign(1, std::vector<std::size_t>(data.train.size()));
    std::iota(shards_[0].begin(), shards_[0].end(), std::size_t{0});
  } else {
    shards_ = partition_noniid(data.train, config.m, config.p, partition_rng).shards();
  }
  for (std::size_t i = 0; i < config.m; ++i) {
    if (shards_[i].empty()) {
      throw ConfigError("trial: device " + std::to_string(i) + " received no training rows");
    }
  }

  compromised_.resize(config.c);
  std::iota(compromised_.begin(), compromised_.end(), std::size_t{0});
  is_compromised_.assign(config.m, false);
  for (std::size_t i : compromised_) is_compromised_[i] = true;

  RngStream schedule_rng(seed, "schedule");
  poisoned_.assign(config.iterations, false);
  for (std::size_t t : poison_schedule(config.iterations, config.poison_fraction, schedule_rng)) poisoned_[t] = true;

  honest_.reserve(config.m);
  sgd_streams_.reserve(config.m);
  flip_streams_.reserve(config.m);
  for (std::size_t i = 0; i < config.m; ++i) {
    honest_.emplace_back(data.train, shards_[i], spec_);
    sgd_streams_.emplace_back(seed, "sgd/device/" + std::to_string(i));
    flip_streams_.emplace_back(seed, "labelflip/device/" + std::to_string(i));
  }
  flipped_.resize(config.m);
  if (config.attack == AttackKind::kLabelFlip && !compromised_.empty()) {
    flipped_train_ = std::make_shared<const Dataset>(flip_labels(data.train));
    for (std::size_t i : compromised_) flipped_[i].emplace(*flipped_train_, shards_[i], spec_);
  }
}

namespace {

struct Crafted {
  std::vector<ParameterVector> models;  // one per compromised position; empty = submit honest
  std::optional<double> lambda;
};

Crafted craft(const ExperimentConfig& config, const ParameterVector& w_re, std::span<const ParameterVector> locals,
              std::span<const std::size_t> positions, RngStream& rng) {
  Crafted out;
  const std::size_t n = positions.size();
  const std::vector<std::size_t> pos(positions.begin(), positions.end());
  std::vector<ParameterVector> compromised_locals;
  for (std::size_t p : pos) compromised_locals.push_back(locals[p]);

  if (config.attack == AttackKind::kGaussian) {
    out.models = attack_gaussian(locals, n, rng);
    return out;
  }
  const AttackSpec spec = config.attack_spec();
  const AggregatorSpec target = config.attack_target_spec();
  const bool full = config.knowledge == KnowledgeMode::kFull;
  if (full && 2 * n >= locals.size()) return out;  // the attacker controls a majority of the sampled set
  const std::vector<ParameterVector> local_copy(locals.begin(), locals.end());
  const KnowledgeScope scope = full ? KnowledgeScope::full(LocalModelSet(local_copy, pos), w_re)
                                    : KnowledgeScope::partial(compromised_locals, w_re);

  if (is_krum_style(config.attack)) {
    std::optional<ParameterVector> before;
    if (full) before = aggregate(target, locals);
    const auto result = attack_krum(scope, spec, n, rng, target.c, before);
    if (result.success) {
      out.models = result.crafted;
      out.lambda = result.lambda;
    }
    return out;
  }
  const ParameterVector direction = full ? signed_direction(aggregate(target, locals), w_re)
                                         : estimate_direction(scope, std::nullopt);
  out.models = attack_trimmed_mean(scope, spec, n, direction, rng);
  return out;
}

}  // namespace

MetricsRecord run_iteration(TrialState& state, const ExperimentConfig& config, std::size_t iteration) {
  if (iteration >= state.poisoned_.size()) throw ConfigError("run_iteration: iteration index out of range");
  MetricsRecord rec;
  rec.iteration = iteration;
  const ParameterVector w_re = state.global_;

  // Step II: honest local updates for every sampled device.
  const auto sampled = sample_devices(config.m, config.sampled(), state.sample_rng_);
  std::vector<ParameterVector> locals;
  locals.reserve(sampled.size());
  std::vector<std::size_t> positions;
  double loss_sum = 0.0;
  for (std::size_t s = 0; s < sampled.size(); ++s) {
    const std::size_t dev = sampled[s];
    auto update = local_update(state.honest_[dev], w_re, config.alpha, config.local_rounds, config.batch_size,
                               state.sgd_streams_[dev]);
    loss_sum += update.first_batch_loss;
    locals.push_back(std::move(update.model));
    if (state.is_compromised_[dev]) positions.push_back(s);
  }
  rec.train_loss = loss_sum / static_cast<double>(sampled.size());

  rec.attack_active =
      state.poisoned_[iteration] && (config.attack != AttackKind::kNone || static_cast<bool>(state.crafter_));
  std::vector<ParameterVector> submitted = locals;
  if (rec.attack_active && !positions.empty()) {
    std::vector<ParameterVector> replacement;
    if (state.crafter_) {
      replacement = state.crafter_(CraftContext{w_re, locals, positions, iteration});
    } else if (config.attack == AttackKind::kLabelFlip) {
      for (std::size_t p : positions) {
        const std::size_t dev = sampled[p];
        replacement.push_back(local_update(*state.flipped_[dev], w_re, config.alpha, config.local_rounds,
                                           config.batch_size, state.flip_streams_[dev])
                                  .model);
      }
    } else {
      try {
        auto crafted = craft(config, w_re, locals, positions, state.attack_rng_);
        replacement = std::move(crafted.models);
        rec.lambda = crafted.lambda;
      } catch (const ConfigError&) {
        // A subsampled round can leave too few compromised devices for the
        // attack; the full-sample case is validated up front.
        if (config.sampled() == config.m) throw;
      }
    }
    if (!replacement.empty()) {
      if (replacement.size() != positions.size()) {
        throw ConfigError("run_iteration: crafter returned " + std::to_string(replacement.size()) +
                          " models for " + std::to_string(positions.size()) + " compromised devices");
      }
      for (std::size_t k = 0; k < positions.size(); ++k) {
        require_same_dim(replacement[k], w_re, "crafted model");
        submitted[positions[k]] = std::move(replacement[k]);
      }
    }
  }

  // Step III: defense filter, then aggregation.
  const AggregatorSpec agg = config.aggregator_spec();
  try {
    if (config.defense != DefenseKind::kNone) {
      const DefenseSpec dspec{config.defense, config.effective_defense_c(), &state.data_->validation};
      auto result = defend(submitted, agg, dspec, state.spec_);
      for (std::size_t i : result.removed) rec.removed.push_back(sampled[i]);
      for (std::size_t i : result.err_removed) rec.err_removed.push_back(sampled[i]);
      for (std::size_t i : result.lfr_removed) rec.lfr_removed.push_back(sampled[i]);
      state.global_ = aggregate(agg, result.survivors);
    } else {
      state.global_ = aggregate(agg, submitted);
    }
  } catch (const ConfigError& e) {
    throw ConfigError("iteration " + std::to_string(iteration) + ": " + e.what());
  }

  rec.test_error = error_rate(state.spec_, state.global_, state.data_->test);
  rec.validation_error = error_rate(state.spec_, state.global_, state.data_->validation);
  return rec;
}

std::uint64_t trial_seed(std::uint64_t master_seed, std::size_t trial) noexcept {
  return mix_seed(master_seed, static_cast<std::uint64_t>(trial));
}

TrialResult run_trial(const ExperimentConfig& config, const ExperimentData& data, std::uint64_t seed) {
  TrialState state(config, data, seed);
  TrialResult out;
  out.seed = seed;
  out.metrics.reserve(config.iterations);
  // Only the best-so-far and the latest iterate are kept; the scan matches
  // select_final_index on the full history.
  ParameterVector best = state.global();
  double best_error = 0.0;
  std::size_t best_iteration = 0;
  for (std::size_t t = 0; t < config.iterations; ++t) {
    out.metrics.push_back(run_iteration(state, config, t));
    const double err = out.metrics.back().validation_error;
    if (t == 0 || err < best_error) {
      best = state.global();
      best_error = err;
      best_iteration = t;
    }
  }
  if (config.selection == SelectionStrategy::kLast) {
    out.final_model = state.global();
    out.final_iteration = config.iterations - 1;
    out.final_test_error = out.metrics.back().test_error;
    out.final_validation_error = out.metrics.back().validation_error;
  } else {
    out.final_model = std::move(best);
    out.final_iteration = best_iteration;
    out.final_test_error = out.metrics[best_iteration].test_error;
    out.final_validation_error = best_error;
  }
  return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config, const Dataset& pool) {
  config.validate();
  ExperimentResult result;
  result.trials.resize(config.trials);
  std::vector<std::exception_ptr> errors(config.trials);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < config.trials; i = next++) {
      try {
        const std::uint64_t seed = trial_seed(config.seed, i);
        RngStream split_rng(seed, "split");
        const ExperimentData data = split_pool(pool, config.data, split_rng);
        result.trials[i] = run_trial(config, data, seed);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::size_t threads = config.threads != 0 ? config.threads : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, config.trials);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool_threads;
    for (std::size_t t = 0; t < threads; ++t) pool_threads.emplace_back(worker);
    for (auto& th : pool_threads) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  auto& s = result.summary;
  s.config_hash = config_hash(config);
  s.trials = config.trials;
  for (const auto& t : result.trials) {
    s.mean_final_test_error += t.final_test_error;
    s.mean_final_validation_error += t.final_validation_error;
  }
  const double n = static_cast<double>(config.trials);
  s.mean_final_test_error /= n;
  s.mean_final_validation_error /= n;
  for (const auto& t : result.trials) {
    const double diff = t.final_test_error - s.mean_final_test_error;
    s.stddev_final_test_error += diff * diff;
  }
  s.stddev_final_test_error = std::sqrt(s.stddev_final_test_error / n);
  return result;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
  config.validate();
  return run_experiment(config, load_pool(config.data, config.seed));
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::string join_ids(const std::vector<std::size_t>& ids) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ';';
    out += std::to_string(ids[i]);
  }
  return out;
}

}  // namespace

void write_metrics_csv(std::span<const MetricsRecord> records, const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "iteration,train_loss,test_error,validation_error,attack_active,lambda,removed\n";
  for (const auto& r : records) {
    out << r.iteration << ',' << format_double(r.train_loss) << ',' << format_double(r.test_error) << ','
        << format_double(r.validation_error) << ',' << (r.attack_active ? 1 : 0) << ','
        << (r.lambda ? format_double(*r.lambda) : std::string()) << ',' << join_ids(r.removed) << '\n';
  }
}

void write_summary_csv(const ExperimentConfig& config, const ExperimentSummary& summary,
                       const std::filesystem::path& path) {
  auto out = open_for_write(path);
  out << "config_hash,trials,selection,mean_final_test_error,stddev_final_test_error,mean_final_validation_error\n";
  out << summary.config_hash << ',' << summary.trials << ',' << to_string(config.selection) << ','
      << format_double(summary.mean_final_test_error) << ',' << format_double(summary.stddev_final_test_error)
      << ',' << format_double(summary.mean_final_validation_error) << '\n';
}

void write_experiment(const ExperimentConfig& config, const ExperimentResult& result,
                      const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < result.trials.size(); ++i) {
    write_metrics_csv(result.trials[i].metrics, dir / ("trial_" + std::to_string(i) + ".csv"));
  }
  write_summary_csv(config, result.summary, dir / "summary.csv");
  auto out = open_for_write(dir / "config.txt");
  for (const auto& [key, value] : to_config_map(config)) out << key << " = " << value << '\n';
}

}  // namespace fedpoison
