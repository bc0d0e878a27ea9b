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
#include "qshape/reports.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>

#include "qshape/error.hpp"
#include "qshape/grouping.hpp"
#include "qshape/reshape.hpp"

namespace qshape {

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::vector<QlBenchRow> ql_bench(const std::vector<int>& bits, std::size_t count,
                                 std::uint64_t seed, double mean_abs) {
  if (count < 2) throw InvalidArgument("ql-bench: count must be >= 2");
  if (!(mean_abs > 0.0) || !std::isfinite(mean_abs)) {
    throw InvalidArgument("ql-bench: mean_abs must be finite and > 0");
  }
  for (int b : bits) {
    if (b < 1 || b > 16) throw InvalidArgument("ql-bench: bits must be in [1, 16]");
  }
  const Distribution kinds[] = {Distribution::Laplace, Distribution::Gaussian,
                                Distribution::Uniform};
  std::vector<QlBenchRow> rows;
  for (std::size_t k = 0; k < 3; ++k) {
    const double scale = scale_for_mean_abs(kinds[k], mean_abs);
    const Tensor x = sample_distribution(kinds[k], scale, count, seed * 3 + k);
    for (int b : bits) {
      const QuantReport r = optimal_alpha(x, b, RangeMode::Symmetric);
      rows.push_back({kinds[k], b, r.alpha_star, r.ql});
    }
  }
  return rows;
}

std::string ql_bench_csv(const std::vector<QlBenchRow>& rows) {
  std::string out = std::string(kQlBenchHeader) + "\n";
  for (const auto& r : rows) {
    out += std::string(to_string(r.distribution)) + "," + std::to_string(r.bits) + "," +
           format_real(r.alpha_star) + "," + format_real(r.ql) + "\n";
  }
  return out;
}

std::string metrics_csv(const std::vector<EpochMetrics>& log) {
  std::string out = std::string(kMetricsHeader) + "\n";
  for (const auto& m : log) {
    const std::string prefix = std::to_string(m.epoch) + "," + format_real(m.loss) + "," +
                               format_real(m.accuracy) + ",";
    for (const auto& l : m.layers) {
      out += prefix + l.layer + "," + format_real(l.ql) + "," + format_real(l.kurtosis) + "\n";
    }
  }
  return out;
}

std::string group_grid_csv(const std::vector<GroupGridRow>& rows) {
  std::string out = std::string(kGroupGridHeader) + "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.seed) + "," + std::to_string(r.bits_w) + "," +
           std::to_string(r.group_size) + "," + format_real(r.acc_float) + "," +
           format_real(r.acc_before) + "," + format_real(r.acc_after) + "\n";
  }
  return out;
}

std::vector<std::string> weight_layer_names(const LayerGraph& graph) {
  std::vector<std::string> names;
  for (const auto& node : graph.nodes) {
    if (weight_param(node)) names.push_back(node.name);
  }
  return names;
}

nlohmann::json inspect_layer(const LayerGraph& graph, const std::string& layer) {
  const auto names = weight_layer_names(graph);
  if (std::find(names.begin(), names.end(), layer) == names.end()) {
    std::string list;
    for (const auto& n : names) list += (list.empty() ? "" : ", ") + n;
    throw InvalidArgument("unknown layer '" + layer + "'; available: " + list);
  }
  const Node& node = graph.node(layer);
  const Tensor& w = weight_param(node)->value;
  const QuantSite* site = quant_site(node);

  int bits = 2;
  GroupScheme scheme = partition_filters(w.dim(0), kWholeLayer);
  if (site && site->weight) {
    bits = site->weight->bits;
    scheme = site->weight->scheme;
  }
  const GroupScheme optimal = group_optimal_alphas(w, scheme, bits);

  nlohmann::json groups = nlohmann::json::array();
  for (std::size_t g = 0; g < scheme.group_count(); ++g) {
    nlohmann::json entry = {{"begin", scheme.boundaries[g].begin},
                            {"end", scheme.boundaries[g].end},
                            {"alpha_opt", optimal.alphas[g]}};
    entry["alpha_stored"] = scheme.calibrated() ? nlohmann::json(scheme.alphas[g])
                                                : nlohmann::json(nullptr);
    groups.push_back(std::move(entry));
  }

  const auto values = w.values();
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<std::uint64_t> counts(kHistogramBins, 0);
  const double width = (hi - lo) / kHistogramBins;
  for (float v : values) {
    std::size_t bin = width > 0.0 ? static_cast<std::size_t>((v - lo) / width) : 0;
    counts[std::min<std::size_t>(bin, kHistogramBins - 1)]++;
  }

  nlohmann::json ql_by_bits = nlohmann::json::object();
  for (int b = 2; b <= 8; ++b) {
    ql_by_bits[std::to_string(b)] = optimal_alpha(w, b, RangeMode::Symmetric).ql;
  }

  nlohmann::json j;
  j["schema"] = kInspectSchema;
  j["layer"] = layer;
  j["shape"] = w.shape();
  j["bits"] = bits;
  j["group_size"] = scheme.group_size;
  j["alpha_star"] = optimal_alpha(w, bits, RangeMode::Symmetric).alpha_star;
  j["groups"] = groups;
  j["histogram"] = {{"bins", kHistogramBins}, {"min", lo}, {"max", hi}, {"counts", counts}};
  j["excess_kurtosis"] = reshape_metrics(values).excess_kurtosis;
  j["ql_by_bits"] = ql_by_bits;
  return j;
}

}  // namespace qshape
