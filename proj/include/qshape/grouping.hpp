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

// Group-based weight quantization: the output filters of a layer are split
// into consecutive blocks and each block gets its own clipping value. The
// per-group scale ratios are later absorbed by the following batch norm so
// that every stored weight lives on one shared grid.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "qshape/tensor.hpp"

namespace qshape {

/// Group size meaning "one group spanning the whole layer".
inline constexpr int kWholeLayer = -1;

enum class AlphaSource {
  /// alpha_l = k_w * mean|G_l|, the Scale-Clip threshold itself.
  ScaleClip,
  /// alpha_l = argmin QL(G_l) after clipping at the Scale-Clip threshold.
  QlSearch,
};

std::string_view to_string(AlphaSource source);
AlphaSource alpha_source_from_string(std::string_view name);

struct FilterRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const noexcept { return end - begin; }
  bool operator==(const FilterRange&) const = default;
};

struct GroupScheme {
  int group_size = kWholeLayer;
  std::vector<FilterRange> boundaries;
  /// Quantization clipping value per group; empty until calibrated.
  std::vector<double> alphas;
  /// Scale-Clip threshold per group (+inf when not reshaping); empty until
  /// calibrated.
  std::vector<double> thresholds;

  std::size_t group_count() const noexcept { return boundaries.size(); }
  std::size_t filter_count() const noexcept {
    return boundaries.empty() ? 0 : boundaries.back().end;
  }
  bool calibrated() const noexcept {
    return !boundaries.empty() && alphas.size() == boundaries.size() &&
           thresholds.size() == boundaries.size();
  }
  /// Group index owning a filter.
  std::size_t group_of(std::size_t filter) const;

  /// Boundaries partition [0, n_filters); alphas (if any) are positive.
  void validate(std::size_t n_filters) const;

  bool operator==(const GroupScheme&) const = default;
};

/// Consecutive blocks of gs filters; the last block takes the remainder.
GroupScheme partition_filters(std::size_t n_filters, int gs);

/// Contiguous weights of one group (weights are [n_filters, ...]).
std::span<const float> group_span(const Tensor& weights, const FilterRange& range);
std::span<float> group_span(Tensor& weights, const FilterRange& range);

/// Per-group alpha minimizing the group's quantized-loss; thresholds set to +inf.
GroupScheme group_optimal_alphas(const Tensor& weights, GroupScheme scheme,
                                 int bits);

/// Fills thresholds with k_w * mean|G_l| and alphas according to `source`.
GroupScheme calibrate_groups(const Tensor& weights, GroupScheme scheme, int bits,
                             double k_w, AlphaSource source);

/// Projects every group onto [-k_w mean|G_l|, k_w mean|G_l|] in place.
void project_groups(Tensor& weights, const GroupScheme& scheme, double k_w);

/// Each group quantized with QuantSpec(bits, Symmetric, alpha_l).
Tensor group_quantize(const Tensor& weights, const GroupScheme& scheme, int bits);

/// Clip at each group's threshold, then quantize with its alpha. `pass_mask`
/// receives 1 where the straight-through gradient passes (|w| within both the
/// threshold and alpha), 0 elsewhere.
void group_fake_quantize(const Tensor& latent, const GroupScheme& scheme,
                         int bits, Tensor& out, std::vector<std::uint8_t>& pass_mask);

/// sum_l ||G_l - Q(G_l; alpha_l)||_1 / ||W||_1.
double grouped_quantized_loss(const Tensor& weights, const GroupScheme& scheme,
                              int bits);

struct BatchNormParams {
  std::vector<float> gamma;
  std::vector<float> beta;
  std::vector<float> running_mean;
  std::vector<float> running_var;
  float eps = 1e-5f;

  std::size_t channels() const noexcept { return gamma.size(); }
};

struct BnFoldPlan {
  /// Multiplier on the BN's effective per-channel scale gamma / sigma.
  std::vector<double> per_channel_scale;
  double reference_alpha = 0.0;
};

struct FoldResult {
  BnFoldPlan plan;
  /// Group-quantized weights re-expressed on the reference grid.
  Tensor weights;
  /// BN whose scale absorbed alpha_l / reference_alpha and whose running mean
  /// was divided by the same ratio.
  BatchNormParams bn;
};

/// `quantized` must be group_quantize(W, scheme, bits) for a calibrated
/// scheme. The reference alpha is max_l alpha_l, so every ratio is <= 1.
FoldResult fold_groups_into_bn(const Tensor& quantized, const GroupScheme& scheme,
                               const BatchNormParams& bn);

/// True when every element equals i * reference_alpha / max_level for an
/// integer |i| <= max_level, within `rel_tol` of the step.
bool on_shared_grid(std::span<const float> weights, int bits,
                    double reference_alpha, double rel_tol = 1e-3);

}  // namespace qshape
