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

// Scale-Clip distribution reshaping.
//
// A tensor uniform on [-T, T] has mean|W| = T / 2, so clipping weights at
// T^w = k * mean|W| with k close to 2 drives their distribution toward a
// uniform one. Activations use a tracked threshold T^a that follows
// k_a * mean|A| by gradient descent on 1/2 (T - k_a mean|A|)^2.

#include <cstdint>
#include <limits>
#include <span>

#include "qshape/tensor.hpp"

namespace qshape {

inline constexpr double kNoReshape = std::numeric_limits<double>::infinity();

struct ClipConfig {
  double k_w = kNoReshape;
  double k_a = 4.0;
  double lambda = 0.01;

  /// k_w >= 1 (or +inf), k_a > 0, lambda in (0, 1].
  void validate() const;
  bool reshapes_weights() const noexcept { return k_w != kNoReshape; }
};

/// k_w * mean|weights|, or +inf when k_w is +inf.
double weight_threshold(std::span<const float> weights, double k_w);
double weight_threshold(const Tensor& weights, double k_w);

/// Elementwise clamp into [-threshold, threshold].
Tensor clip_weights(const Tensor& weights, double threshold);
void clip_weights_inplace(std::span<float> weights, double threshold);

struct ActivationTracker {
  double t_a = 0.0;
  bool initialized = false;
  std::uint64_t update_count = 0;

  bool operator==(const ActivationTracker&) const = default;
};

/// One tracker step from a batch's mean |A|.
ActivationTracker update_activation_threshold(ActivationTracker tracker,
                                              double batch_mean_abs, double k_a,
                                              double lambda);
ActivationTracker update_activation_threshold(
    ActivationTracker tracker, std::span<const float> batch_activations,
    double k_a, double lambda);

struct ReshapeMetrics {
  double excess_kurtosis = 0.0;
  /// Fraction of elements with |w| >= 2 mean|W|.
  double clip_fraction_at_2mean = 0.0;
};

ReshapeMetrics reshape_metrics(std::span<const float> weights);

}  // namespace qshape
