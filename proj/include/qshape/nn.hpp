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

// Minimal CPU engine: Conv2D / Dense / BatchNorm / ReLU with hand-written
// backward passes and fake-quantization sites on weight layers.
//
// A QuantSite on a Conv2D or Dense layer covers the layer's weights and its
// input activations. Quantized values are used in the forward pass while the
// latent float parameters receive the (clipped straight-through) gradients.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "qshape/grouping.hpp"
#include "qshape/reshape.hpp"
#include "qshape/tensor.hpp"

namespace qshape {

enum class Mode { Train, Eval };

struct Parameter {
  Tensor value;
  Tensor grad;
  /// SGD momentum buffer.
  Tensor velocity;
  bool decay = true;

  explicit Parameter(Tensor v = {}, bool decay_ = true);
};

struct WeightQuantConfig {
  int bits = 2;
  /// false keeps the weights float while still reshaping them.
  bool quantize = true;
  double k_w = kNoReshape;
  AlphaSource alpha_source = AlphaSource::ScaleClip;
  GroupScheme scheme;
};

struct ActQuantConfig {
  int bits = 8;
  double k_a = 4.0;
  double lambda = 0.01;
  ActivationTracker tracker;
};

struct QuantSite {
  std::optional<WeightQuantConfig> weight;
  std::optional<ActQuantConfig> act;
  /// Phase gate: fake quantization runs only when enabled.
  bool enabled = false;
  /// Set once the group scales were merged into the following batch norm.
  std::optional<double> folded_reference_alpha;
  /// Number of fake-quantize invocations performed at this site.
  std::uint64_t quantize_calls = 0;
};

struct Conv2D {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  Parameter weight;  // [out, in, k, k]
  std::optional<Parameter> bias;
  QuantSite site;

  struct Cache {
    Shape input_shape;
    Tensor cols;  // [N, in*k*k, out_h*out_w] of the (quantized) input
    Tensor effective_weight;
    std::vector<std::uint8_t> weight_mask;  // empty: all pass
    std::vector<std::uint8_t> input_mask;   // empty: all pass
  } cache;

  std::size_t out_size(std::size_t in) const {
    return (in + 2 * padding - kernel) / stride + 1;
  }
};

struct Dense {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  Parameter weight;  // [out, in]
  std::optional<Parameter> bias;
  QuantSite site;

  struct Cache {
    Shape input_shape;
    Tensor input;  // [N, in], after activation quantization
    Tensor effective_weight;
    std::vector<std::uint8_t> weight_mask;
    std::vector<std::uint8_t> input_mask;
  } cache;
};

struct BatchNorm {
  std::size_t channels = 0;
  Parameter gamma;
  Parameter beta;
  Tensor running_mean;
  Tensor running_var;
  float eps = 1e-5f;
  /// running = momentum * running + (1 - momentum) * batch
  float momentum = 0.9f;
  /// Frozen layers normalize with running statistics in every mode.
  bool frozen = false;

  struct Cache {
    Shape input_shape;
    Tensor normalized;
    std::vector<float> inv_std;
    bool used_batch_stats = false;
  } cache;

  BatchNormParams params() const;
  void set_params(const BatchNormParams& p);
};

struct ReLU {
  struct Cache {
    std::vector<std::uint8_t> mask;
  } cache;
};

using Layer = std::variant<Conv2D, Dense, BatchNorm, ReLU>;

struct Node {
  std::string name;
  Layer layer;
};

struct LayerGraph {
  /// Per-sample input shape, e.g. {C, H, W}.
  Shape input_shape;
  std::vector<Node> nodes;
  bool has_cache = false;

  Node& node(const std::string& name);
  const Node& node(const std::string& name) const;
  std::optional<std::size_t> index_of(const std::string& name) const;
};

struct ParamRef {
  std::string name;
  Parameter* param;
};

Conv2D make_conv(std::size_t in, std::size_t out, std::size_t kernel,
                 std::size_t stride, std::size_t padding, bool bias = false);
Dense make_dense(std::size_t in, std::size_t out, bool bias = true);
BatchNorm make_batchnorm(std::size_t channels);

/// He-normal weights from a seeded generator; BN gamma = 1, beta = 0.
void initialize_parameters(LayerGraph& graph, std::uint64_t seed);

/// Per-sample output shape of every node, in order. Throws ShapeError when the
/// chain is broken.
std::vector<Shape> infer_shapes(const LayerGraph& graph);

/// Shape chain plus the rule that grouped weight sites feed a BatchNorm.
void validate_graph(const LayerGraph& graph);

Tensor forward(LayerGraph& graph, const Tensor& input, Mode mode);

/// Accumulates parameter gradients from d(loss)/d(output). Requires a
/// Train-mode forward.
void backward(LayerGraph& graph, const Tensor& loss_grad);

std::vector<ParamRef> parameters(LayerGraph& graph);
void zero_grad(LayerGraph& graph);

QuantSite* quant_site(Node& node);
const QuantSite* quant_site(const Node& node);
Parameter* weight_param(Node& node);
const Parameter* weight_param(const Node& node);

void set_quantization_enabled(LayerGraph& graph, bool enabled);

/// Recomputes group thresholds and alphas of every weight site from the
/// current latent weights.
void calibrate_weight_sites(LayerGraph& graph);

/// Scale-Clip projection of the latent weights of every reshaping site.
void project_weights(LayerGraph& graph);

void freeze_batchnorm(LayerGraph& graph);

struct LossResult {
  double loss = 0.0;
  Tensor grad;
};

/// Mean softmax cross-entropy over the batch and its gradient wrt logits.
LossResult softmax_cross_entropy(const Tensor& logits,
                                 std::span<const int> labels);

/// Index of the largest logit per row.
std::vector<int> argmax_rows(const Tensor& logits);

}  // namespace qshape
