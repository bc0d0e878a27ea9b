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
#include "qshape/reshape.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qshape/error.hpp"

namespace qshape {

void ClipConfig::validate() const {
  if (std::isnan(k_w) || k_w < 1.0) {
    std::ostringstream os;
    os << "k_w must be >= 1 or inf, got " << k_w;
    throw InvalidArgument(os.str());
  }
  if (!(k_a > 0.0)) throw InvalidArgument("k_a must be > 0");
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw InvalidArgument("lambda must be in (0, 1]");
  }
}

double weight_threshold(std::span<const float> weights, double k_w) {
  if (weights.empty()) throw InvalidArgument("weight_threshold: empty tensor");
  if (std::isnan(k_w) || k_w <= 0.0) {
    throw InvalidArgument("weight_threshold: k_w must be > 0");
  }
  if (k_w == kNoReshape) return kNoReshape;
  return k_w * mean_abs(weights);
}

double weight_threshold(const Tensor& weights, double k_w) {
  return weight_threshold(weights.values(), k_w);
}

void clip_weights_inplace(std::span<float> weights, double threshold) {
  if (!(threshold > 0.0)) {
    throw InvalidArgument("clip_weights: threshold must be > 0");
  }
  if (threshold == kNoReshape) return;
  const float t = static_cast<float>(threshold);
  for (float& w : weights) {
    if (w >= t) {
      w = t;
    } else if (w <= -t) {
      w = -t;
    }
  }
}

Tensor clip_weights(const Tensor& weights, double threshold) {
  Tensor out = weights;
  clip_weights_inplace(out.values(), threshold);
  return out;
}

ActivationTracker update_activation_threshold(ActivationTracker tracker,
                                              double batch_mean_abs, double k_a,
                                              double lambda) {
  if (!(lambda > 0.0 && lambda <= 1.0)) {
    throw InvalidArgument("activation tracker: lambda must be in (0, 1]");
  }
  const double target = k_a * batch_mean_abs;
  if (!tracker.initialized) {
    tracker.t_a = target;
    tracker.initialized = true;
  } else {
    tracker.t_a -= lambda * (tracker.t_a - target);
  }
  ++tracker.update_count;
  if (!(tracker.t_a > 0.0) || !std::isfinite(tracker.t_a)) {
    std::ostringstream os;
    os << "activation threshold became non-positive (" << tracker.t_a
       << ") after " << tracker.update_count << " updates";
    throw InvalidArgument(os.str());
  }
  return tracker;
}

ActivationTracker update_activation_threshold(
    ActivationTracker tracker, std::span<const float> batch_activations,
    double k_a, double lambda) {
  if (batch_activations.empty()) {
    throw InvalidArgument("activation tracker: empty batch");
  }
  require_finite(batch_activations, "activation tracker");
  return update_activation_threshold(tracker, mean_abs(batch_activations), k_a,
                                     lambda);
}

ReshapeMetrics reshape_metrics(std::span<const float> weights) {
  if (weights.size() < 4) {
    throw InvalidArgument("reshape_metrics: need at least 4 elements");
  }
  const double n = static_cast<double>(weights.size());
  double mean = 0.0;
  for (float w : weights) mean += w;
  mean /= n;
  double m2 = 0.0;
  double m4 = 0.0;
  for (float w : weights) {
    const double d = w - mean;
    const double d2 = d * d;
    m2 += d2;
    m4 += d2 * d2;
  }
  m2 /= n;
  m4 /= n;
  if (!(m2 > 1e-30)) {
    throw InvalidArgument("reshape_metrics: degenerate (zero) variance");
  }
  const double cut = 2.0 * mean_abs(weights);
  const auto beyond = std::count_if(weights.begin(), weights.end(), [cut](float w) {
    return std::fabs(static_cast<double>(w)) >= cut;
  });
  return ReshapeMetrics{m4 / (m2 * m2) - 3.0, static_cast<double>(beyond) / n};
}

}  // namespace qshape
