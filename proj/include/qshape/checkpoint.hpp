/*
 * Copyright 2026 The qshape Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

// Checkpoint directory layout:
//   manifest.json               schema, config, run state, architecture, sites,
//                               metrics log and the tensor index
//   <node>.<param>.qten         parameter values
//   <node>.<param>.velocity.qten
//   <node>.running_mean.qten, <node>.running_var.qten
//
// A checkpoint is written into a staging directory and swapped into place, so
// readers only ever see a complete one.

#include <filesystem>

#include <json.hpp>

#include "qshape/config.hpp"
#include "qshape/train.hpp"

namespace qshape {

inline constexpr int kCheckpointSchema = 1;

struct Checkpoint {
  ExperimentConfig config;
  TrainRun run;
};

void save_checkpoint(const std::filesystem::path& dir, const ExperimentConfig& config,
                     const TrainRun& run);

/// Throws FormatError for a missing or malformed manifest, an unknown schema
/// version, or tensors that do not match the recorded architecture.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

nlohmann::json graph_to_json(const LayerGraph& graph);
/// Architecture and site state only; parameters are zero-initialized.
LayerGraph graph_from_json(const nlohmann::json& j);

nlohmann::json metrics_to_json(const EpochMetrics& m);
EpochMetrics metrics_from_json(const nlohmann::json& j);

}  // namespace qshape
