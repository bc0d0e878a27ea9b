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
#include <algorithm>
#include <cmath>

#include "qshape/error.hpp"
#include "qshape/train.hpp"

namespace qshape {

LayerGraph finalize_for_inference(const TrainRun& run) {
  return finalize_for_inference(run.graph);
}

LayerGraph finalize_for_inference(const LayerGraph& source) {
  LayerGraph graph = source;
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    Node& node = graph.nodes[i];
    QuantSite* site = quant_site(node);
    if (!site || !site->weight || !site->enabled || !site->weight->quantize) continue;
    const auto& wq = *site->weight;
    if (wq.scheme.group_count() < 2) continue;

    BatchNorm* bn = i + 1 < graph.nodes.size()
                        ? std::get_if<BatchNorm>(&graph.nodes[i + 1].layer)
                        : nullptr;
    if (!bn) {
      throw FoldError("layer '" + node.name +
                      "' is grouped but not followed by a BatchNorm");
    }
    if (!wq.scheme.calibrated()) {
      throw InvalidArgument("layer '" + node.name + "': group scheme not calibrated");
    }
    Parameter& weight = *weight_param(node);
    Tensor quantized;
    std::vector<std::uint8_t> unused_mask;
    group_fake_quantize(weight.value, wq.scheme, wq.bits, quantized, unused_mask);
    FoldResult folded = fold_groups_into_bn(quantized, wq.scheme, bn->params());

    if (auto* conv = std::get_if<Conv2D>(&node.layer); conv && conv->bias) {
      for (std::size_t c = 0; c < conv->out_channels; ++c) {
        conv->bias->value[c] = static_cast<float>(conv->bias->value[c] /
                                                  folded.plan.per_channel_scale[c]);
      }
    }
    weight.value = std::move(folded.weights);
    bn->set_params(folded.bn);
    site->folded_reference_alpha = folded.plan.reference_alpha;
    site->weight.reset();
  }
  freeze_batchnorm(graph);
  return graph;
}

double max_relative_error(const Tensor& a, const Tensor& ref) {
  if (a.shape() != ref.shape()) throw ShapeError("max_relative_error: shape mismatch");
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    diff = std::max(diff, std::fabs(static_cast<double>(a[i]) - ref[i]));
    scale = std::max(scale, std::fabs(static_cast<double>(ref[i])));
  }
  if (scale == 0.0) return diff;
  return diff / scale;
}

}  // namespace qshape
