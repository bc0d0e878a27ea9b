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

#include <functional>
#include <string>
#include <vector>

#include "qshape/config.hpp"
#include "qshape/reports.hpp"

namespace qshape {

/// Replaces the group scheme of every weight site with a fresh, uncalibrated
/// partition of size `group_size`.
void regroup_weight_sites(LayerGraph& graph, int group_size);

using GridProgress = std::function<void(const std::string&)>;

/// For every seed: one float pretrain, then a finetune per (bits_w, group
/// size) cell starting from a copy of the pretrained run.
std::vector<GroupGridRow> run_group_grid(const ExperimentConfig& config, const ToyDataset& data,
                                      const GridProgress& progress = {});

}  // namespace qshape
