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
#include "qshape/train.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "qshape/error.hpp"
#include "qshape/quant.hpp"

namespace qshape {

std::string_view to_string(Phase phase) {
  return phase == Phase::FloatPretrain ? "float_pretrain" : "lowbit_finetune";
}

Phase phase_from_string(std::string_view name) {
  if (name == "float_pretrain") return Phase::FloatPretrain;
  if (name == "lowbit_finetune") return Phase::LowBitFinetune;
  throw InvalidArgument("unknown phase '" + std::string(name) + "'");
}

LayerGraph build_toy_cnn(const ModelSpec& model, const DatasetSpec& data,
                         const QuantConfig& quant, const ClipConfig& clip,
                         std::uint64_t seed) {
  if (model.widths.empty() || model.widths.size() != model.strides.size()) {
    throw InvalidArgument("model: widths and strides must be non-empty and equal length");
  }
  clip.validate();
  LayerGraph g;
  g.input_shape = {data.channels, data.height, data.width};
  std::size_t in = data.channels, h = data.height, w = data.width;
  for (std::size_t i = 0; i < model.widths.size(); ++i) {
    const std::size_t out = model.widths[i];
    Conv2D conv = make_conv(in, out, 3, model.strides[i], 1);
    const bool first = i == 0;

    WeightQuantConfig wq;
    wq.bits = quant.bits_w;
    wq.quantize = !(first && quant.skip_first_layer);
    wq.k_w = clip.k_w;
    wq.alpha_source = quant.alpha_source;
    wq.scheme = partition_filters(out, quant.group_size);
    conv.site.weight = wq;
    if (!first && quant.quantize_activations) {
      conv.site.act = ActQuantConfig{quant.bits_a, clip.k_a, clip.lambda, {}};
    }

    const std::string idx = std::to_string(i + 1);
    h = conv.out_size(h);
    w = conv.out_size(w);
    g.nodes.push_back({"conv" + idx, std::move(conv)});
    g.nodes.push_back({"bn" + idx, make_batchnorm(out)});
    g.nodes.push_back({"relu" + idx, ReLU{}});
    in = out;
  }
  g.nodes.push_back({"fc", make_dense(in * h * w, static_cast<std::size_t>(data.classes))});
  validate_graph(g);
  initialize_parameters(g, seed);
  return g;
}

TrainRun make_train_run(const ModelSpec& model, const DatasetSpec& data,
                        const QuantConfig& quant, const ClipConfig& clip,
                        const ScheduleConfig& schedule, std::uint64_t seed) {
  TrainRun run;
  run.graph = build_toy_cnn(model, data, quant, clip, seed);
  run.clip = clip;
  run.quant = quant;
  run.schedule = schedule;
  run.seed = seed;
  return run;
}

Tensor predict(LayerGraph& graph, const Tensor& inputs, std::size_t batch) {
  const std::size_t n = inputs.dim(0), per = inputs.row_size();
  Tensor logits;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t len = std::min(batch, n - start);
    Shape shape = inputs.shape();
    shape[0] = len;
    Tensor xb(shape, std::vector<float>(inputs.data() + start * per,
                                        inputs.data() + (start + len) * per));
    const Tensor out = forward(graph, xb, Mode::Eval);
    if (logits.empty()) logits = Tensor({n, out.dim(1)});
    std::copy(out.data(), out.data() + out.numel(), logits.data() + start * out.dim(1));
  }
  return logits;
}

double evaluate_accuracy(LayerGraph& graph, const Tensor& inputs,
                         const std::vector<int>& labels, std::size_t batch) {
  const auto pred = argmax_rows(predict(graph, inputs, batch));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
  return 100.0 * static_cast<double>(hit) / static_cast<double>(labels.size());
}

std::vector<LayerMetric> layer_metrics(const LayerGraph& graph, int bits) {
  std::vector<LayerMetric> out;
  for (const auto& node : graph.nodes) {
    const auto* conv = std::get_if<Conv2D>(&node.layer);
    if (!conv) continue;
    const auto w = conv->weight.value.values();
    out.push_back({node.name, optimal_alpha(w, bits, RangeMode::Symmetric).ql,
                   reshape_metrics(w).excess_kurtosis});
  }
  return out;
}

namespace {

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 gen(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(epoch) + 1);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[gen() % (i + 1)]);
  return order;
}

double phase_lr(const TrainRun& run, int total_epochs) {
  const auto& s = run.schedule;
  const double base = run.phase == Phase::FloatPretrain ? s.pretrain_lr : s.finetune_lr;
  const int decay_at = static_cast<int>(std::floor(s.lr_decay_fraction * total_epochs));
  return run.phase_epoch >= decay_at ? base * s.lr_decay_factor : base;
}

void sgd_step(LayerGraph& graph, const ScheduleConfig& s, double lr) {
  const float mu = static_cast<float>(s.momentum);
  const float wd = static_cast<float>(s.weight_decay);
  const float step = static_cast<float>(lr);
  for (auto& ref : parameters(graph)) {
    Parameter& p = *ref.param;
    if (p.velocity.shape() != p.value.shape()) p.velocity = Tensor(p.value.shape());
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      float g = p.grad[i];
      if (p.decay) g += wd * p.value[i];
      p.velocity[i] = mu * p.velocity[i] + g;
      p.value[i] -= step * p.velocity[i];
    }
  }
}

void refresh_sites(TrainRun& run, std::size_t step) {
  const bool due = run.quant.alpha_source == AlphaSource::ScaleClip ||
                   step % static_cast<std::size_t>(run.schedule.alpha_refresh_steps) == 0;
  if (due) calibrate_weight_sites(run.graph);
}

void run_epochs(TrainRun& run, const ToyDataset& data, int total_epochs,
                const EpochHook& hook) {
  const auto& s = run.schedule;
  if (s.batch_size == 0) throw InvalidArgument("batch_size must be > 0");
  if (s.alpha_refresh_steps < 1) throw InvalidArgument("alpha_refresh_steps must be >= 1");
  const std::size_t n = data.train_x.dim(0), per = data.train_x.row_size();
  const bool quantized = run.phase == Phase::LowBitFinetune;
  Shape batch_shape = data.train_x.shape();

  while (run.phase_epoch < total_epochs) {
    const double lr = phase_lr(run, total_epochs);
    const auto order = epoch_order(n, run.seed, run.epoch);
    double loss_sum = 0.0;
    std::size_t step = 0;
    if (run.phase == Phase::FloatPretrain && run.phase_epoch == 0) project_weights(run.graph);
    for (std::size_t start = 0; start < n; start += s.batch_size, ++step) {
      const std::size_t len = std::min(s.batch_size, n - start);
      batch_shape[0] = len;
      Tensor xb(batch_shape);
      std::vector<int> yb(len);
      for (std::size_t i = 0; i < len; ++i) {
        const std::size_t src = order[start + i];
        std::copy(data.train_x.data() + src * per, data.train_x.data() + (src + 1) * per,
                  xb.data() + i * per);
        yb[i] = data.train_y[src];
      }
      if (quantized) refresh_sites(run, step);

      LossResult loss;
      try {
        const Tensor logits = forward(run.graph, xb, Mode::Train);
        loss = softmax_cross_entropy(logits, yb);
      } catch (const NonFiniteError& e) {
        throw DivergenceError(std::string("training diverged: ") + e.what());
      }
      if (!std::isfinite(loss.loss)) {
        throw DivergenceError("training diverged: loss is not finite at epoch " +
                              std::to_string(run.epoch));
      }
      loss_sum += loss.loss * static_cast<double>(len);
      zero_grad(run.graph);
      backward(run.graph, loss.grad);
      sgd_step(run.graph, s, lr);
      project_weights(run.graph);
      for (const auto& p : parameters(run.graph)) {
        if (find_non_finite(p.param->value.values())) {
          throw DivergenceError("training diverged: parameter " + p.name +
                                " is not finite");
        }
      }
    }
    if (quantized) calibrate_weight_sites(run.graph);

    EpochMetrics m;
    m.epoch = run.epoch + 1;
    m.phase = run.phase;
    m.loss = loss_sum / static_cast<double>(n);
    m.accuracy = evaluate_accuracy(run.graph, data.test_x, data.test_y);
    m.layers = layer_metrics(run.graph, run.quant.bits_w);
    run.log.push_back(std::move(m));
    ++run.epoch;
    ++run.phase_epoch;
    if (hook && !hook(run)) return;
  }
}

}  // namespace

void pretrain_float(TrainRun& run, const ToyDataset& data, const EpochHook& hook) {
  if (run.phase != Phase::FloatPretrain) {
    throw InvalidArgument("pretrain_float requires phase float_pretrain");
  }
  set_quantization_enabled(run.graph, false);
  run_epochs(run, data, run.schedule.pretrain_epochs, hook);
  if (run.phase_epoch >= run.schedule.pretrain_epochs) {
    run.float_accuracy = run.log.empty()
                             ? evaluate_accuracy(run.graph, data.test_x, data.test_y)
                             : run.log.back().accuracy;
  }
}

void begin_finetune(TrainRun& run, const ToyDataset& data, int bits_w, int bits_a) {
  if (run.phase != Phase::FloatPretrain) {
    throw InvalidArgument("begin_finetune: run is already in the finetune phase");
  }
  if (!run.float_accuracy) {
    run.float_accuracy = evaluate_accuracy(run.graph, data.test_x, data.test_y);
  }
  run.quant.bits_w = bits_w;
  run.quant.bits_a = bits_a;
  for (auto& node : run.graph.nodes) {
    QuantSite* site = quant_site(node);
    if (!site) continue;
    if (site->weight) site->weight->bits = bits_w;
    if (site->act) site->act->bits = bits_a;
  }
  validate_graph(run.graph);
  run.phase = Phase::LowBitFinetune;
  run.phase_epoch = 0;
  set_quantization_enabled(run.graph, true);
  calibrate_weight_sites(run.graph);
  run.accuracy_before_finetune = evaluate_accuracy(run.graph, data.test_x, data.test_y);
}

void finetune_lowbit(TrainRun& run, const ToyDataset& data, int bits_w, int bits_a,
                     const EpochHook& hook) {
  if (run.phase == Phase::FloatPretrain) begin_finetune(run, data, bits_w, bits_a);
  if (run.quant.bits_w != bits_w || run.quant.bits_a != bits_a) {
    throw InvalidArgument("finetune_lowbit: bitwidths differ from the running finetune");
  }
  set_quantization_enabled(run.graph, true);
  run_epochs(run, data, run.schedule.finetune_epochs, hook);
}

}  // namespace qshape
