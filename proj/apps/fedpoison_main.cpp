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

// Command-line front end: run, sweep and defend.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fedpoison/harness.hpp"

namespace fp = fedpoison;

namespace {

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  std::size_t trials = 0;
  std::string out = "out";
};

void add_common(CLI::App* cmd, CommonOptions& o, bool seed_required) {
  cmd->add_option("-c,--config", o.config_path, "key = value config file")->check(CLI::ExistingFile);
  cmd->add_option("-s,--set", o.sets, "override one key: key=value (repeatable)");
  auto* seed = cmd->add_option("--seed", o.seed, "master seed");
  if (seed_required) seed->required();
  cmd->add_option("--trials", o.trials, "number of trials (overrides the config)");
  cmd->add_option("-o,--out", o.out, "output directory");
}

fp::ConfigMap overrides(const CommonOptions& o) {
  fp::ConfigMap out;
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw fp::ConfigError("--set expects key=value, got '" + s + "'");
    auto parsed = fp::parse_config_text(s);
    for (auto& [k, v] : parsed) out[k] = v;
  }
  return out;
}

fp::ExperimentConfig build_config(const CommonOptions& o, bool seed_given) {
  fp::ExperimentConfig config;
  if (!o.config_path.empty()) config = fp::apply_config(config, fp::read_config_file(o.config_path));
  config = fp::apply_config(config, overrides(o));
  if (seed_given) config.seed = o.seed;
  if (o.trials != 0) config.trials = o.trials;
  config.validate();
  return config;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

int cmd_run(const CommonOptions& o) {
  const auto config = build_config(o, true);
  const auto result = fp::run_experiment(config);
  fp::write_experiment(config, result, o.out);
  std::cout << "config_hash " << result.summary.config_hash << "\n"
            << "trials " << result.summary.trials << "\n"
            << "mean_final_test_error " << fmt(result.summary.mean_final_test_error) << "\n"
            << "wrote " << o.out << "\n";
  return 0;
}

int cmd_sweep(const CommonOptions& o, const std::string& param, const std::vector<std::string>& values,
              bool seed_given) {
  const auto base = build_config(o, seed_given);
  const auto pool = fp::load_pool(base.data, base.seed);
  std::filesystem::create_directories(o.out);
  std::ofstream table(std::filesystem::path(o.out) / "sweep.csv");
  table << param << ",config_hash,mean_final_test_error,stddev_final_test_error\n";
  std::vector<double> errors;
  for (const auto& v : values) {
    auto config = fp::apply_config(base, {{param, v}});
    config.validate();
    const auto result = fp::run_experiment(config, pool);
    fp::write_experiment(config, result, std::filesystem::path(o.out) / (param + "_" + v));
    errors.push_back(result.summary.mean_final_test_error);
    table << v << ',' << result.summary.config_hash << ',' << result.summary.mean_final_test_error << ','
          << result.summary.stddev_final_test_error << '\n';
    std::cout << param << "=" << v << "  error " << fmt(result.summary.mean_final_test_error) << "\n";
  }
  bool monotone = true;
  for (std::size_t i = 1; i < errors.size(); ++i) monotone = monotone && errors[i] >= errors[i - 1];
  std::cout << "non-decreasing in " << param << ": " << (monotone ? "yes" : "no") << "\n";
  return 0;
}

int cmd_defend(const CommonOptions& o, const std::vector<std::string>& rules,
               const std::vector<std::string>& defenses, const std::vector<std::string>& attacks,
               bool seed_given) {
  const auto base = build_config(o, seed_given);
  const auto pool = fp::load_pool(base.data, base.seed);
  std::filesystem::create_directories(o.out);
  std::ofstream table(std::filesystem::path(o.out) / "defend.csv");
  table << "aggregator,defense";
  std::cout << "aggregator+defense";
  for (const auto& a : attacks) {
    table << ",attack_" << a;
    std::cout << "\t" << a;
  }
  table << '\n';
  std::cout << "\n";
  for (const auto& rule : rules) {
    for (const auto& defense : defenses) {
      table << rule << ',' << defense;
      std::cout << rule << "+" << defense;
      for (const auto& attack : attacks) {
        auto config = fp::apply_config(base, {{"aggregator", rule}, {"defense", defense}, {"attack", attack}});
        config.validate();
        const auto result = fp::run_experiment(config, pool);
        fp::write_experiment(config, result,
                             std::filesystem::path(o.out) / (rule + "_" + defense + "_" + attack));
        table << ',' << result.summary.mean_final_test_error;
        std::cout << "\t" << fmt(result.summary.mean_final_test_error) << std::flush;
      }
      table << '\n';
      std::cout << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated-learning poisoning lab: robust aggregation, local model poisoning, defenses"};
  app.require_subcommand(1);

  CommonOptions run_opts;
  auto* run = app.add_subcommand("run", "run one experiment and write per-trial metrics");
  add_common(run, run_opts, true);

  CommonOptions sweep_opts;
  std::string sweep_param;
  std::vector<std::string> sweep_values;
  auto* sweep = app.add_subcommand("sweep", "run a grid over one config key");
  add_common(sweep, sweep_opts, false);
  sweep->add_option("--param", sweep_param, "config key to vary")->required();
  sweep->add_option("--values", sweep_values, "values to try")->required()->delimiter(',');

  CommonOptions defend_opts;
  std::vector<std::string> rules{"krum", "trimmed_mean"};
  std::vector<std::string> defenses{"none", "err", "lfr", "union"};
  std::vector<std::string> attacks{"none", "krum", "trimmed_mean"};
  auto* defend = app.add_subcommand("defend", "aggregator+defense rows against attack columns");
  add_common(defend, defend_opts, false);
  defend->add_option("--rules", rules, "aggregation rules")->delimiter(',');
  defend->add_option("--defenses", defenses, "defenses")->delimiter(',');
  defend->add_option("--attacks", attacks, "attacks")->delimiter(',');

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(run_opts);
    if (*sweep) return cmd_sweep(sweep_opts, sweep_param, sweep_values, sweep->count("--seed") > 0);
    if (*defend) return cmd_defend(defend_opts, rules, defenses, attacks, defend->count("--seed") > 0);
  } catch (const fp::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const fp::ParseError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
