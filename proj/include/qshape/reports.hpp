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

// CSV and JSON report emission. Numbers are written in the shortest form that
// round-trips, so reports are byte-deterministic.
//
//   ql-bench CSV:   distribution,bits,alpha_star,ql
//   metrics CSV:    epoch,loss,acc,layer,ql,kurtosis   (one row per epoch and conv layer)
//   group grid CSV: seed,bits_w,group_size,acc_float,acc_before,acc_after
//   inspect JSON:   {"schema": 1, "layer", "shape", "bits", "group_size",
//                    "alpha_star", "groups": [{"begin", "end", "alpha_opt",
//                    "alpha_stored"}], "histogram": {"bins", "min", "max",
//                    "counts"}, "excess_kurtosis", "ql_by_bits": {"2".."8"}}

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "qshape/quant.hpp"
#include "qshape/train.hpp"

namespace qshape {

inline constexpr const char* kQlBenchHeader = "distribution,bits,alpha_star,ql";
inline constexpr const char* kMetricsHeader = "epoch,loss,acc,layer,ql,kurtosis";
inline constexpr const char* kGroupGridHeader =
    "seed,bits_w,group_size,acc_float,acc_before,acc_after";
inline constexpr int kInspectSchema = 1;
inline constexpr int kHistogramBins = 64;

std::string format_real(double v);

struct QlBenchRow {
  Distribution distribution = Distribution::Uniform;
  int bits = 0;
  double alpha_star = 0.0;
  double ql = 0.0;
};

/// Laplace, Gaussian and Uniform samples scaled to the same E|x| (= mean_abs),
/// optimal alpha and QL for every bitwidth.
std::vector<QlBenchRow> ql_bench(const std::vector<int>& bits, std::size_t count,
                                 std::uint64_t seed, double mean_abs = 1.0);
std::string ql_bench_csv(const std::vector<QlBenchRow>& rows);

std::string metrics_csv(const std::vector<EpochMetrics>& log);

struct GroupGridRow {
  std::uint64_t seed = 0;
  int bits_w = 0;
  int group_size = 0;
  double acc_float = 0.0;
  double acc_before = 0.0;
  double acc_after = 0.0;
};

std::string group_grid_csv(const std::vector<GroupGridRow>& rows);

/// Names of the layers that carry weights (conv and dense).
std::vector<std::string> weight_layer_names(const LayerGraph& graph);

/// Throws InvalidArgument naming the available layers when `layer` is unknown.
nlohmann::json inspect_layer(const LayerGraph& graph, const std::string& layer);

}  // namespace qshape
