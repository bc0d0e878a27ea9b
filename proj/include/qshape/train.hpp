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

// Two-phase training flow:
//   1. FloatPretrain   - float SGD; weights projected by Scale-Clip after every
//                        step, activations clipped at the tracked T^a.
//   2. LowBitFinetune  - group-quantized weights and quantized activations in
//                        the forward pass, STE gradients on latent weights.
// followed by finalize_for_inference(), which merges per-group scales into
// the batch norms.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "qshape/grouping.hpp"
#include "qshape/nn.hpp"
#include "qshape/reshape.hpp"

namespace qshape {

struct DatasetSpec {
  std::uint64_t seed = 1234;
  int classes = 10;
  std::size_t channels = 3;
  std::size_t height = 12;
  std::size_t width = 12;
  std::size_t train_per_class = 300;
  std::size_t test_per_class = 100;
  double noise = 4.5;
  /// Templates are circularly shifted by up to this many pixels per axis.
  int max_shift = 1;
  /// Per-sample amplitude drawn from [1 - jitter, 1 + jitter].
  double amplitude_jitter = 0.3;
};

struct ToyDataset {
  DatasetSpec spec;
  Tensor templates;  // [classes, C, H, W], unit RMS
  Tensor train_x;    // [N, C, H, W]
  std::vector<int> train_y;
  Tensor test_x;
  std::vector<int> test_y;
};

/// Class templates (random smooth blobs) plus shift, amplitude jitter and
/// Gaussian noise. Classes are balanced exactly.
ToyDataset generate_toy_dataset(const DatasetSpec& spec);

/// Circular shift of one [C, H, W] image.
Tensor shift_image(std::span<const float> image, const Shape& chw, int dy, int dx);

struct ModelSpec {
  std::vector<std::size_t> widths{16, 32, 64};
  std::vector<std::size_t> strides{1, 2, 2};
};

struct QuantConfig {
  int bits_w = 2;
  int bits_a = 8;
  int group_size = kWholeLayer;
  AlphaSource alpha_source = AlphaSource::ScaleClip;
  /// Leaves the first convolution's weights float (still reshaped).
  bool skip_first_layer = true;
  /// Whether activations entering conv layers 2.. are quantized.
  bool quantize_activations = true;
};

struct ScheduleConfig {
  int pretrain_epochs = 30;
  int finetune_epochs = 10;
  std::size_t batch_size = 32;
  double pretrain_lr = 0.1;
  double finetune_lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  /// Learning rate is multiplied by lr_decay_factor from this fraction of a
  /// phase's epochs onward.
  double lr_decay_fraction = 2.0 / 3.0;
  double lr_decay_factor = 0.1;
  /// ql_search alphas are refreshed every this many steps.
  int alpha_refresh_steps = 16;
};

/// conv-BN-ReLU blocks followed by a dense classifier, with a QuantSite on
/// every convolution.
LayerGraph build_toy_cnn(const ModelSpec& model, const DatasetSpec& data,
                         const QuantConfig& quant, const ClipConfig& clip,
                         std::uint64_t seed);

enum class Phase { FloatPretrain, LowBitFinetune };

std::string_view to_string(Phase phase);
Phase phase_from_string(std::string_view name);

struct LayerMetric {
  std::string layer;
  double ql = 0.0;
  double kurtosis = 0.0;
  bool operator==(const LayerMetric&) const = default;
};

struct EpochMetrics {
  int epoch = 0;
  Phase phase = Phase::FloatPretrain;
  double loss = 0.0;
  double accuracy = 0.0;
  std::vector<LayerMetric> layers;
  bool operator==(const EpochMetrics&) const = default;
};

struct TrainRun {
  LayerGraph graph;
  ClipConfig clip;
  QuantConfig quant;
  ScheduleConfig schedule;
  Phase phase = Phase::FloatPretrain;
  std::uint64_t seed = 0;
  /// Completed epochs across both phases.
  int epoch = 0;
  /// Completed epochs in the current phase.
  int phase_epoch = 0;
  std::vector<EpochMetrics> log;
  std::optional<double> float_accuracy;
  std::optional<double> accuracy_before_finetune;
};

TrainRun make_train_run(const ModelSpec& model, const DatasetSpec& data,
                        const QuantConfig& quant, const ClipConfig& clip,
                        const ScheduleConfig& schedule, std::uint64_t seed);

/// Called after every epoch; returning false stops training early.
using EpochHook = std::function<bool(const TrainRun&)>;

void pretrain_float(TrainRun& run, const ToyDataset& data, const EpochHook& hook = {});

/// Switches a pretrained run to LowBitFinetune with the given bitwidths,
/// calibrates every site and records the accuracy before finetuning.
void begin_finetune(TrainRun& run, const ToyDataset& data, int bits_w, int bits_a);

/// Runs the remaining finetune epochs (calls begin_finetune first if needed).
void finetune_lowbit(TrainRun& run, const ToyDataset& data, int bits_w, int bits_a,
                     const EpochHook& hook = {});

/// Top-1 accuracy in percent, Eval mode.
double evaluate_accuracy(LayerGraph& graph, const Tensor& inputs,
                         const std::vector<int>& labels, std::size_t batch = 250);

Tensor predict(LayerGraph& graph, const Tensor& inputs, std::size_t batch = 250);

/// Layer-level QL (single optimal alpha) and excess kurtosis of every conv.
std::vector<LayerMetric> layer_metrics(const LayerGraph& graph, int bits);

/// Merges per-group scales into the following batch norms and freezes all BN
/// statistics. Grouped layers end up with plain pre-quantized weights on one
/// shared grid.
LayerGraph finalize_for_inference(const TrainRun& run);
LayerGraph finalize_for_inference(const LayerGraph& graph);

/// max |a - ref| / max |ref|.
double max_relative_error(const Tensor& a, const Tensor& ref);

}  // namespace qshape
