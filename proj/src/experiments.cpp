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
#include "qshape/experiments.hpp"

#include "qshape/error.hpp"

namespace qshape {

void regroup_weight_sites(LayerGraph& graph, int group_size) {
  for (auto& node : graph.nodes) {
    QuantSite* site = quant_site(node);
    if (!site || !site->weight) continue;
    const std::size_t filters = weight_param(node)->value.dim(0);
    site->weight->scheme = partition_filters(filters, group_size);
  }
  validate_graph(graph);
}

std::vector<GroupGridRow> run_group_grid(const ExperimentConfig& config, const ToyDataset& data,
                                      const GridProgress& progress) {
  if (!config.grid) throw ConfigError("config key 'grid' is required for a grid run");
  const GridSpec& grid = *config.grid;
  std::vector<GroupGridRow> rows;
  for (std::uint64_t seed : grid.seeds) {
    TrainRun base = make_train_run(config.model, config.dataset, config.quant, config.clip,
                                   config.schedule, seed);
    pretrain_float(base, data);
    if (progress) {
      progress("seed " + std::to_string(seed) + ": float " +
               format_real(*base.float_accuracy));
    }
    for (int bits : grid.bits_w) {
      for (int gs : grid.group_sizes) {
        TrainRun run = base;
        run.quant.group_size = gs;
        regroup_weight_sites(run.graph, gs);
        finetune_lowbit(run, data, bits, config.quant.bits_a);
        GroupGridRow row{seed, bits, gs, *run.float_accuracy, *run.accuracy_before_finetune,
                      run.log.empty() ? 0.0 : run.log.back().accuracy};
        if (config.schedule.finetune_epochs == 0) row.acc_after = row.acc_before;
        rows.push_back(row);
        if (progress) {
          progress("seed " + std::to_string(seed) + " bits " + std::to_string(bits) + " gs " +
                   std::to_string(gs) + ": before " + format_real(row.acc_before) +
                   " after " + format_real(row.acc_after));
        }
      }
    }
  }
  return rows;
}

}  // namespace qshape
