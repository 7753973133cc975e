# Copyright 2026 The fedpoison Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.


"""Federated-learning poisoning lab: robust aggregation, attacks and defenses."""

from fedpoison._fedpoison import (
    ConfigError,
    DimensionError,
    aggregate,
    bulyan,
    config_hash,
    krum,
    krum_scores,
    mean,
    median,
    resolve_config,
    run_experiment,
    trimmed_mean,
)

__all__ = [
    "ConfigError",
    "DimensionError",
    "aggregate",
    "bulyan",
    "config_hash",
    "krum",
    "krum_scores",
    "mean",
    "median",
    "resolve_config",
    "run_experiment",
    "trimmed_mean",
]
