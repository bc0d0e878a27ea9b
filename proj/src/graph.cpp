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
#include <cmath>
#include <random>

#include "layers.hpp"
#include "qshape/error.hpp"
#include "qshape/nn.hpp"

namespace qshape {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};

Parameter::Parameter(Tensor v, bool decay_)
    : value(std::move(v)), grad(value.shape()), velocity(value.shape()), decay(decay_) {}

BatchNormParams BatchNorm::params() const {
  auto vec = [](const Tensor& t) { return std::vector<float>(t.values().begin(), t.values().end()); };
  return BatchNormParams{vec(gamma.value), vec(beta.value), vec(running_mean),
                         vec(running_var), eps};
}

void BatchNorm::set_params(const BatchNormParams& p) {
  if (p.channels() != channels) throw ShapeError("batchnorm: channel mismatch");
  std::copy(p.gamma.begin(), p.gamma.end(), gamma.value.data());
  std::copy(p.beta.begin(), p.beta.end(), beta.value.data());
  std::copy(p.running_mean.begin(), p.running_mean.end(), running_mean.data());
  std::copy(p.running_var.begin(), p.running_var.end(), running_var.data());
  eps = p.eps;
}

Node& LayerGraph::node(const std::string& name) {
  if (auto i = index_of(name)) return nodes[*i];
  throw InvalidArgument("no layer named '" + name + "'");
}

const Node& LayerGraph::node(const std::string& name) const {
  if (auto i = index_of(name)) return nodes[*i];
  throw InvalidArgument("no layer named '" + name + "'");
}

std::optional<std::size_t> LayerGraph::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].name == name) return i;
  }
  return std::nullopt;
}

Conv2D make_conv(std::size_t in, std::size_t out, std::size_t kernel,
                 std::size_t stride, std::size_t padding, bool bias) {
  Conv2D c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = kernel;
  c.stride = stride;
  c.padding = padding;
  c.weight = Parameter(Tensor({out, in, kernel, kernel}));
  if (bias) c.bias = Parameter(Tensor({out}), false);
  return c;
}

Dense make_dense(std::size_t in, std::size_t out, bool bias) {
  Dense d;
  d.in_features = in;
  d.out_features = out;
  d.weight = Parameter(Tensor({out, in}));
  if (bias) d.bias = Parameter(Tensor({out}), false);
  return d;
}

BatchNorm make_batchnorm(std::size_t channels) {
  BatchNorm bn;
  bn.channels = channels;
  bn.gamma = Parameter(Tensor({channels}, 1.0f), false);
  bn.beta = Parameter(Tensor({channels}), false);
  bn.running_mean = Tensor({channels});
  bn.running_var = Tensor({channels}, 1.0f);
  return bn;
}

void initialize_parameters(LayerGraph& graph, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  auto he_normal = [&gen](Tensor& w, std::size_t fan_in) {
    const double sigma = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (std::size_t i = 0; i < w.numel(); i += 2) {
      const double u1 = (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
      const double u2 = (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
      const double r = sigma * std::sqrt(-2.0 * std::log(u1));
      w[i] = static_cast<float>(r * std::cos(2.0 * M_PI * u2));
      if (i + 1 < w.numel()) w[i + 1] = static_cast<float>(r * std::sin(2.0 * M_PI * u2));
    }
  };
  for (auto& node : graph.nodes) {
    std::visit(Overloaded{
                   [&](Conv2D& c) {
                     he_normal(c.weight.value, c.in_channels * c.kernel * c.kernel);
                     if (c.bias) c.bias->value.fill(0.0f);
                   },
                   [&](Dense& d) {
                     he_normal(d.weight.value, d.in_features);
                     if (d.bias) d.bias->value.fill(0.0f);
                   },
                   [](BatchNorm& bn) {
                     bn.gamma.value.fill(1.0f);
                     bn.beta.value.fill(0.0f);
                     bn.running_mean.fill(0.0f);
                     bn.running_var.fill(1.0f);
                   },
                   [](ReLU&) {},
               },
               node.layer);
  }
}

std::vector<Shape> infer_shapes(const LayerGraph& graph) {
  std::vector<Shape> shapes;
  Shape cur = graph.input_shape;
  for (const auto& node : graph.nodes) {
    auto fail = [&](const std::string& why) {
      throw ShapeError("layer '" + node.name + "': " + why + " (input " +
                       shape_to_string(cur) + ")");
    };
    std::visit(Overloaded{
                   [&](const Conv2D& c) {
                     if (cur.size() != 3 || cur[0] != c.in_channels) {
                       fail("expects " + std::to_string(c.in_channels) + " channels");
                     }
                     if (cur[1] + 2 * c.padding < c.kernel ||
                         cur[2] + 2 * c.padding < c.kernel) {
                       fail("kernel larger than padded input");
                     }
                     cur = {c.out_channels, c.out_size(cur[1]), c.out_size(cur[2])};
                   },
                   [&](const Dense& d) {
                     if (shape_numel(cur) != d.in_features) {
                       fail("expects " + std::to_string(d.in_features) + " features");
                     }
                     cur = {d.out_features};
                   },
                   [&](const BatchNorm& bn) {
                     if (cur.empty() || cur[0] != bn.channels) {
                       fail("expects " + std::to_string(bn.channels) + " channels");
                     }
                   },
                   [](const ReLU&) {},
               },
               node.layer);
    shapes.push_back(cur);
  }
  return shapes;
}

QuantSite* quant_site(Node& node) {
  if (auto* c = std::get_if<Conv2D>(&node.layer)) return &c->site;
  if (auto* d = std::get_if<Dense>(&node.layer)) return &d->site;
  return nullptr;
}

const QuantSite* quant_site(const Node& node) {
  return quant_site(const_cast<Node&>(node));
}

Parameter* weight_param(Node& node) {
  if (auto* c = std::get_if<Conv2D>(&node.layer)) return &c->weight;
  if (auto* d = std::get_if<Dense>(&node.layer)) return &d->weight;
  return nullptr;
}

const Parameter* weight_param(const Node& node) {
  return weight_param(const_cast<Node&>(node));
}

void validate_graph(const LayerGraph& graph) {
  const auto shapes = infer_shapes(graph);
  for (std::size_t i = 0; i < graph.nodes.size(); ++i) {
    const auto& node = graph.nodes[i];
    const QuantSite* site = quant_site(node);
    if (!site || !site->weight) continue;
    const auto& wq = *site->weight;
    const std::size_t filters = weight_param(node)->value.dim(0);
    if (wq.scheme.boundaries.empty()) {
      throw InvalidArgument("layer '" + node.name + "': weight site has no group scheme");
    }
    wq.scheme.validate(filters);
    if (wq.scheme.group_count() > 1 || wq.scheme.group_size != kWholeLayer) {
      const bool bn_next = i + 1 < graph.nodes.size() &&
                           std::holds_alternative<BatchNorm>(graph.nodes[i + 1].layer);
      if (!bn_next) {
        throw FoldError("layer '" + node.name +
                        "': grouped quantization requires a following BatchNorm "
                        "(use group size -1)");
      }
    }
    if (wq.bits < 1 || wq.bits > 16) {
      throw InvalidArgument("layer '" + node.name + "': weight bits out of range");
    }
  }
}

Tensor forward(LayerGraph& graph, const Tensor& input, Mode mode) {
  if (input.ndim() < 1 ||
      Shape(input.shape().begin() + 1, input.shape().end()) != graph.input_shape) {
    throw ShapeError("graph input " + shape_to_string(input.shape()) +
                     " does not match [N] + " + shape_to_string(graph.input_shape));
  }
  require_finite(input.values(), "graph input");
  graph.has_cache = false;
  Tensor x = input;
  for (auto& node : graph.nodes) {
    x = std::visit(Overloaded{
                       [&](Conv2D& c) { return detail::conv_forward(c, x, mode); },
                       [&](Dense& d) { return detail::dense_forward(d, x, mode); },
                       [&](BatchNorm& bn) { return detail::batchnorm_forward(bn, x, mode); },
                       [&](ReLU& r) { return detail::relu_forward(r, x); },
                   },
                   node.layer);
    require_finite(x.values(), "output of layer '" + node.name + "'");
  }
  graph.has_cache = mode == Mode::Train;
  return x;
}

void backward(LayerGraph& graph, const Tensor& loss_grad) {
  if (!graph.has_cache) {
    throw InvalidArgument("backward called without a Train-mode forward");
  }
  Tensor g = loss_grad;
  for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
    g = std::visit(Overloaded{
                       [&](Conv2D& c) { return detail::conv_backward(c, g); },
                       [&](Dense& d) { return detail::dense_backward(d, g); },
                       [&](BatchNorm& bn) { return detail::batchnorm_backward(bn, g); },
                       [&](ReLU& r) { return detail::relu_backward(r, g); },
                   },
                   it->layer);
  }
  graph.has_cache = false;
}

std::vector<ParamRef> parameters(LayerGraph& graph) {
  std::vector<ParamRef> out;
  for (auto& node : graph.nodes) {
    std::visit(Overloaded{
                   [&](Conv2D& c) {
                     out.push_back({node.name + ".weight", &c.weight});
                     if (c.bias) out.push_back({node.name + ".bias", &*c.bias});
                   },
                   [&](Dense& d) {
                     out.push_back({node.name + ".weight", &d.weight});
                     if (d.bias) out.push_back({node.name + ".bias", &*d.bias});
                   },
                   [&](BatchNorm& bn) {
                     out.push_back({node.name + ".gamma", &bn.gamma});
                     out.push_back({node.name + ".beta", &bn.beta});
                   },
                   [](ReLU&) {},
               },
               node.layer);
  }
  return out;
}

void zero_grad(LayerGraph& graph) {
  for (auto& p : parameters(graph)) {
    if (p.param->grad.shape() != p.param->value.shape()) {
      p.param->grad = Tensor(p.param->value.shape());
    } else {
      p.param->grad.fill(0.0f);
    }
  }
}

void set_quantization_enabled(LayerGraph& graph, bool enabled) {
  for (auto& node : graph.nodes) {
    if (QuantSite* site = quant_site(node)) site->enabled = enabled;
  }
}

void calibrate_weight_sites(LayerGraph& graph) {
  for (auto& node : graph.nodes) {
    QuantSite* site = quant_site(node);
    if (!site || !site->weight) continue;
    auto& wq = *site->weight;
    if (!wq.quantize) {
      wq.scheme.alphas.clear();
      wq.scheme.thresholds.clear();
      continue;
    }
    wq.scheme = calibrate_groups(weight_param(node)->value, std::move(wq.scheme),
                                 wq.bits, wq.k_w, wq.alpha_source);
  }
}

void project_weights(LayerGraph& graph) {
  for (auto& node : graph.nodes) {
    QuantSite* site = quant_site(node);
    if (!site || !site->weight || site->weight->k_w == kNoReshape) continue;
    project_groups(weight_param(node)->value, site->weight->scheme, site->weight->k_w);
  }
}

void freeze_batchnorm(LayerGraph& graph) {
  for (auto& node : graph.nodes) {
    if (auto* bn = std::get_if<BatchNorm>(&node.layer)) bn->frozen = true;
  }
}

}  // namespace qshape
