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
#include "layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "qshape/error.hpp"
#include "qshape/quant.hpp"

namespace qshape::detail {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_matrix(float* p, std::size_t rows, std::size_t cols) {
  return MatMap(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatMap as_matrix(const float* p, std::size_t rows, std::size_t cols) {
  return ConstMatMap(p, static_cast<Eigen::Index>(rows),
                     static_cast<Eigen::Index>(cols));
}

// Input activations: track T^a in training, clip at it, and quantize onto the
// non-negative grid when the site is enabled.
Tensor apply_input_site(QuantSite& site, const Tensor& x, Mode mode,
                        std::vector<std::uint8_t>& mask) {
  mask.clear();
  if (!site.act) return x;
  auto& act = *site.act;
  if (mode == Mode::Train) {
    act.tracker = update_activation_threshold(act.tracker, x.values(), act.k_a,
                                              act.lambda);
  }
  if (!act.tracker.initialized) {
    throw InvalidArgument("activation threshold not calibrated; run a training "
                          "forward before evaluating");
  }
  const float t = static_cast<float>(act.tracker.t_a);
  Tensor out(x.shape());
  mask.resize(x.numel());
  if (site.enabled) {
    const QuantSpec spec{act.bits, RangeMode::NonNegative, act.tracker.t_a};
    spec.validate();
    for (std::size_t i = 0; i < x.numel(); ++i) {
      mask[i] = (x[i] >= 0.0f && x[i] <= t) ? 1 : 0;
      out[i] = quantize_value(x[i], spec);
    }
    ++site.quantize_calls;
  } else {
    for (std::size_t i = 0; i < x.numel(); ++i) {
      mask[i] = x[i] <= t ? 1 : 0;
      out[i] = std::min(x[i], t);
    }
  }
  return out;
}

// Weights seen by the forward pass. Fills `out`/`mask` only when quantizing.
const Tensor& effective_weights(QuantSite& site, const Parameter& weight,
                                Tensor& out, std::vector<std::uint8_t>& mask) {
  mask.clear();
  if (!site.enabled || !site.weight || !site.weight->quantize) {
    out = Tensor();
    return weight.value;
  }
  auto& wq = *site.weight;
  if (!wq.scheme.calibrated()) {
    throw InvalidArgument("weight quantization site used before calibration");
  }
  group_fake_quantize(weight.value, wq.scheme, wq.bits, out, mask);
  ++site.quantize_calls;
  return out;
}

void mask_gradient(std::span<float> grad, const std::vector<std::uint8_t>& mask) {
  if (mask.empty()) return;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!mask[i]) grad[i] = 0.0f;
  }
}

void accumulate(Tensor& grad, const Tensor& value_like) {
  if (grad.shape() != value_like.shape()) grad = Tensor(value_like.shape());
}

}  // namespace

Tensor conv_forward(Conv2D& layer, const Tensor& x, Mode mode) {
  if (x.ndim() != 4 || x.dim(1) != layer.in_channels) {
    throw ShapeError("conv2d expects [N, " + std::to_string(layer.in_channels) +
                     ", H, W], got " + shape_to_string(x.shape()));
  }
  auto& cache = layer.cache;
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t k = layer.kernel, s = layer.stride, p = layer.padding;
  const std::size_t oh = layer.out_size(h), ow = layer.out_size(w);
  const std::size_t rows = c * k * k, cols = oh * ow, o = layer.out_channels;

  const Tensor input = apply_input_site(layer.site, x, mode, cache.input_mask);
  const Tensor& wt = effective_weights(layer.site, layer.weight,
                                       cache.effective_weight, cache.weight_mask);
  cache.input_shape = x.shape();
  cache.cols = Tensor({n, rows, cols});

  Tensor y({n, o, oh, ow});
  const auto wmat = as_matrix(wt.data(), o, rows);
  for (std::size_t b = 0; b < n; ++b) {
    const float* xb = input.data() + b * c * h * w;
    float* col = cache.cols.data() + b * rows * cols;
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t ki = 0; ki < k; ++ki) {
        for (std::size_t kj = 0; kj < k; ++kj) {
          float* dst = col + ((ci * k + ki) * k + kj) * cols;
          for (std::size_t yo = 0; yo < oh; ++yo) {
            const long iy = static_cast<long>(yo * s + ki) - static_cast<long>(p);
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const long ix = static_cast<long>(xo * s + kj) - static_cast<long>(p);
              const bool inside = iy >= 0 && iy < static_cast<long>(h) && ix >= 0 &&
                                  ix < static_cast<long>(w);
              dst[yo * ow + xo] = inside ? xb[(ci * h + iy) * w + ix] : 0.0f;
            }
          }
        }
      }
    }
    auto out = as_matrix(y.data() + b * o * cols, o, cols);
    out.noalias() = wmat * as_matrix(col, rows, cols);
    if (layer.bias) {
      for (std::size_t f = 0; f < o; ++f) out.row(f).array() += layer.bias->value[f];
    }
  }
  return y;
}

Tensor conv_backward(Conv2D& layer, const Tensor& dy) {
  auto& cache = layer.cache;
  const auto& xs = cache.input_shape;
  const std::size_t n = xs[0], c = xs[1], h = xs[2], w = xs[3];
  const std::size_t k = layer.kernel, s = layer.stride, p = layer.padding;
  const std::size_t oh = layer.out_size(h), ow = layer.out_size(w);
  const std::size_t rows = c * k * k, cols = oh * ow, o = layer.out_channels;
  if (dy.shape() != Shape{n, o, oh, ow}) throw ShapeError("conv2d backward: bad grad shape");

  const Tensor& wt = cache.effective_weight.empty() ? layer.weight.value
                                                    : cache.effective_weight;
  Tensor dw(layer.weight.value.shape());
  auto dwmat = as_matrix(dw.data(), o, rows);
  const auto wmat = as_matrix(wt.data(), o, rows);
  Tensor dx(xs);
  RowMat dcol(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  std::vector<double> db(o, 0.0);

  for (std::size_t b = 0; b < n; ++b) {
    const auto g = as_matrix(dy.data() + b * o * cols, o, cols);
    const auto col = as_matrix(cache.cols.data() + b * rows * cols, rows, cols);
    dwmat.noalias() += g * col.transpose();
    dcol.noalias() = wmat.transpose() * g;
    if (layer.bias) {
      for (std::size_t f = 0; f < o; ++f) db[f] += g.row(f).sum();
    }
    float* dxb = dx.data() + b * c * h * w;
    for (std::size_t ci = 0; ci < c; ++ci) {
      for (std::size_t ki = 0; ki < k; ++ki) {
        for (std::size_t kj = 0; kj < k; ++kj) {
          const float* src = dcol.data() + ((ci * k + ki) * k + kj) * cols;
          for (std::size_t yo = 0; yo < oh; ++yo) {
            const long iy = static_cast<long>(yo * s + ki) - static_cast<long>(p);
            if (iy < 0 || iy >= static_cast<long>(h)) continue;
            for (std::size_t xo = 0; xo < ow; ++xo) {
              const long ix = static_cast<long>(xo * s + kj) - static_cast<long>(p);
              if (ix < 0 || ix >= static_cast<long>(w)) continue;
              dxb[(ci * h + iy) * w + ix] += src[yo * ow + xo];
            }
          }
        }
      }
    }
  }

  mask_gradient(dw.values(), cache.weight_mask);
  accumulate(layer.weight.grad, layer.weight.value);
  for (std::size_t i = 0; i < dw.numel(); ++i) layer.weight.grad[i] += dw[i];
  if (layer.bias) {
    accumulate(layer.bias->grad, layer.bias->value);
    for (std::size_t f = 0; f < o; ++f) {
      layer.bias->grad[f] += static_cast<float>(db[f]);
    }
  }
  mask_gradient(dx.values(), cache.input_mask);
  return dx;
}

Tensor dense_forward(Dense& layer, const Tensor& x, Mode mode) {
  if (x.ndim() < 2 || x.numel() != x.dim(0) * layer.in_features) {
    throw ShapeError("dense expects [N, " + std::to_string(layer.in_features) +
                     "] (flattened), got " + shape_to_string(x.shape()));
  }
  auto& cache = layer.cache;
  const std::size_t n = x.dim(0);
  cache.input_shape = x.shape();
  const Tensor flat = x.reshaped({n, layer.in_features});
  cache.input = apply_input_site(layer.site, flat, mode, cache.input_mask);
  const Tensor& wt = effective_weights(layer.site, layer.weight,
                                       cache.effective_weight, cache.weight_mask);
  Tensor y({n, layer.out_features});
  auto out = as_matrix(y.data(), n, layer.out_features);
  out.noalias() = as_matrix(cache.input.data(), n, layer.in_features) *
                  as_matrix(wt.data(), layer.out_features, layer.in_features).transpose();
  if (layer.bias) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t f = 0; f < layer.out_features; ++f) {
        out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(f)) +=
            layer.bias->value[f];
      }
    }
  }
  return y;
}

Tensor dense_backward(Dense& layer, const Tensor& dy) {
  auto& cache = layer.cache;
  const std::size_t n = cache.input_shape.at(0);
  const std::size_t in = layer.in_features, out = layer.out_features;
  if (dy.shape() != Shape{n, out}) throw ShapeError("dense backward: bad grad shape");
  const Tensor& wt = cache.effective_weight.empty() ? layer.weight.value
                                                    : cache.effective_weight;
  const auto g = as_matrix(dy.data(), n, out);

  Tensor dw({out, in});
  as_matrix(dw.data(), out, in).noalias() =
      g.transpose() * as_matrix(cache.input.data(), n, in);
  mask_gradient(dw.values(), cache.weight_mask);
  accumulate(layer.weight.grad, layer.weight.value);
  for (std::size_t i = 0; i < dw.numel(); ++i) layer.weight.grad[i] += dw[i];
  if (layer.bias) {
    accumulate(layer.bias->grad, layer.bias->value);
    for (std::size_t f = 0; f < out; ++f) {
      double sum = 0.0;
      for (std::size_t r = 0; r < n; ++r) sum += dy[r * out + f];
      layer.bias->grad[f] += static_cast<float>(sum);
    }
  }

  Tensor dx({n, in});
  as_matrix(dx.data(), n, in).noalias() = g * as_matrix(wt.data(), out, in);
  mask_gradient(dx.values(), cache.input_mask);
  return dx.reshaped(cache.input_shape);
}

namespace {

// Layout helpers: [N, C] or [N, C, H, W]; `inner` is H*W (1 for 2-D input).
struct BnLayout {
  std::size_t n, c, inner;
};

BnLayout bn_layout(const BatchNorm& layer, const Shape& shape) {
  if ((shape.size() != 2 && shape.size() != 4) || shape[1] != layer.channels) {
    throw ShapeError("batchnorm expects [N, " + std::to_string(layer.channels) +
                     "(, H, W)], got " + shape_to_string(shape));
  }
  return {shape[0], shape[1], shape.size() == 4 ? shape[2] * shape[3] : 1};
}

}  // namespace

Tensor batchnorm_forward(BatchNorm& layer, const Tensor& x, Mode mode) {
  const auto [n, c, inner] = bn_layout(layer, x.shape());
  auto& cache = layer.cache;
  cache.input_shape = x.shape();
  cache.normalized = Tensor(x.shape());
  cache.inv_std.assign(c, 0.0f);
  const bool batch_stats = mode == Mode::Train && !layer.frozen;
  cache.used_batch_stats = batch_stats;
  if (batch_stats && n * inner < 2) {
    throw ShapeError("batchnorm training needs more than one value per channel");
  }

  Tensor y(x.shape());
  const double count = static_cast<double>(n * inner);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double mean, var;
    if (batch_stats) {
      double sum = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const float* px = x.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) sum += px[i];
      }
      mean = sum / count;
      double sq = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        const float* px = x.data() + (b * c + ch) * inner;
        for (std::size_t i = 0; i < inner; ++i) {
          const double d = px[i] - mean;
          sq += d * d;
        }
      }
      var = sq / count;
      const float m = layer.momentum;
      layer.running_mean[ch] = m * layer.running_mean[ch] +
                               (1.0f - m) * static_cast<float>(mean);
      layer.running_var[ch] =
          m * layer.running_var[ch] +
          (1.0f - m) * static_cast<float>(var * count / (count - 1.0));
    } else {
      mean = layer.running_mean[ch];
      var = layer.running_var[ch];
    }
    const float inv_std = static_cast<float>(1.0 / std::sqrt(var + layer.eps));
    const float meanf = static_cast<float>(mean);
    cache.inv_std[ch] = inv_std;
    const float g = layer.gamma.value[ch], be = layer.beta.value[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const float xh = (x[off + i] - meanf) * inv_std;
        cache.normalized[off + i] = xh;
        y[off + i] = g * xh + be;
      }
    }
  }
  return y;
}

Tensor batchnorm_backward(BatchNorm& layer, const Tensor& dy) {
  auto& cache = layer.cache;
  if (dy.shape() != cache.input_shape) throw ShapeError("batchnorm backward: bad grad shape");
  const auto [n, c, inner] = bn_layout(layer, dy.shape());
  accumulate(layer.gamma.grad, layer.gamma.value);
  accumulate(layer.beta.grad, layer.beta.value);
  Tensor dx(dy.shape());
  const double count = static_cast<double>(n * inner);
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xh = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xh += static_cast<double>(dy[off + i]) * cache.normalized[off + i];
      }
    }
    layer.gamma.grad[ch] += static_cast<float>(sum_dy_xh);
    layer.beta.grad[ch] += static_cast<float>(sum_dy);
    const double scale = static_cast<double>(layer.gamma.value[ch]) * cache.inv_std[ch];
    for (std::size_t b = 0; b < n; ++b) {
      const std::size_t off = (b * c + ch) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        double g = dy[off + i];
        if (cache.used_batch_stats) {
          g -= (sum_dy + cache.normalized[off + i] * sum_dy_xh) / count;
        }
        dx[off + i] = static_cast<float>(scale * g);
      }
    }
  }
  return dx;
}

Tensor relu_forward(ReLU& layer, const Tensor& x) {
  Tensor y(x.shape());
  layer.cache.mask.resize(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const bool on = x[i] > 0.0f;
    layer.cache.mask[i] = on;
    y[i] = on ? x[i] : 0.0f;
  }
  return y;
}

Tensor relu_backward(ReLU& layer, const Tensor& dy) {
  if (dy.numel() != layer.cache.mask.size()) throw ShapeError("relu backward: bad grad shape");
  Tensor dx(dy.shape());
  for (std::size_t i = 0; i < dy.numel(); ++i) {
    dx[i] = layer.cache.mask[i] ? dy[i] : 0.0f;
  }
  return dx;
}

}  // namespace qshape::detail
