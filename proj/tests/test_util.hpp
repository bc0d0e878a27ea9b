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

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "qshape/config.hpp"
#include "qshape/nn.hpp"
#include "qshape/tensor.hpp"
#include "qshape/train.hpp"

namespace qshape::testing {

inline Tensor random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> dist(0.0, scale);
  Tensor t(shape);
  for (auto& v : t.values()) v = static_cast<float>(dist(gen));
  return t;
}

inline Tensor uniform_tensor(const Shape& shape, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(shape);
  for (auto& v : t.values()) v = static_cast<float>(dist(gen));
  return t;
}

// Reference quantizer in double precision, written independently of the library.
inline double ref_quantize(double w, double alpha, int bits) {
  if (bits == 1) return w >= 0.0 ? alpha : -alpha;
  const double m = std::pow(2.0, bits - 1) - 1.0;
  const double s = alpha / m;
  const double c = std::clamp(w, -alpha, alpha);
  const double mag = std::floor(std::fabs(c) / s + 0.5) * s;
  return c < 0.0 ? -mag : mag;
}

inline double ref_ql(std::span<const float> w, double alpha, int bits) {
  double num = 0.0, den = 0.0;
  for (float v : w) {
    num += std::fabs(v - ref_quantize(v, alpha, bits));
    den += std::fabs(v);
  }
  return num / den;
}

// Exhaustive scan over `points` evenly spaced alphas in (0, reach * max|w|].
inline double scan_min_ql(std::span<const float> w, int bits, int points = 10000,
                          double reach = 1.0) {
  double top = 0.0;
  for (float v : w) top = std::max(top, static_cast<double>(std::fabs(v)));
  top *= reach;
  double best = INFINITY;
  for (int i = 1; i <= points; ++i) {
    best = std::min(best, ref_ql(w, top * i / points, bits));
  }
  return best;
}

// sum(out * probe) in double, the scalar used by the gradient checks.
inline double probe_loss(LayerGraph& graph, const Tensor& x, const Tensor& probe) {
  const Tensor out = forward(graph, x, Mode::Train);
  double l = 0.0;
  for (std::size_t i = 0; i < out.numel(); ++i) l += static_cast<double>(out[i]) * probe[i];
  return l;
}

struct GradCheck {
  std::string param;
  double rel_error = 0.0;
  std::size_t worst_index = 0;
  double worst_numeric = 0.0;
  double worst_analytic = 0.0;
};

// Central differences on every parameter element against backward().
// rel_error is ||numeric - analytic|| / max(||numeric|| + ||analytic||, tiny).
inline std::vector<GradCheck> check_gradients(LayerGraph& graph, const Tensor& x,
                                              std::uint64_t seed, double eps = 1e-3) {
  Shape out_shape = {x.dim(0)};
  const Shape per = infer_shapes(graph).back();
  out_shape.insert(out_shape.end(), per.begin(), per.end());
  const Tensor probe = random_tensor(out_shape, seed);

  zero_grad(graph);
  forward(graph, x, Mode::Train);
  backward(graph, probe);
  std::vector<GradCheck> out;
  for (auto& ref : parameters(graph)) {
    Parameter& p = *ref.param;
    const Tensor analytic = p.grad;
    double diff = 0.0, norm = 0.0;
    GradCheck r{ref.name};
    double worst = -1.0;
    for (std::size_t i = 0; i < p.value.numel(); ++i) {
      const float keep = p.value[i];
      p.value[i] = keep + static_cast<float>(eps);
      const double up = probe_loss(graph, x, probe);
      p.value[i] = keep - static_cast<float>(eps);
      const double down = probe_loss(graph, x, probe);
      p.value[i] = keep;
      const double numeric = (up - down) / (2.0 * eps);
      diff += (numeric - analytic[i]) * (numeric - analytic[i]);
      norm += numeric * numeric + static_cast<double>(analytic[i]) * analytic[i];
      if (std::fabs(numeric - analytic[i]) > worst) {
        worst = std::fabs(numeric - analytic[i]);
        r.worst_index = i;
        r.worst_numeric = numeric;
        r.worst_analytic = analytic[i];
      }
    }
    r.rel_error = std::sqrt(diff) / std::max(std::sqrt(norm), 1e-12);
    out.push_back(r);
  }
  return out;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("qshape_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Small configuration that trains in a couple of seconds.
inline ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.dataset.train_per_class = 20;
  c.dataset.test_per_class = 10;
  c.dataset.noise = 1.0;
  c.model.widths = {4, 8, 8};
  c.schedule.pretrain_epochs = 2;
  c.schedule.finetune_epochs = 2;
  c.schedule.batch_size = 16;
  c.quant.group_size = 4;
  return c;
}

}  // namespace qshape::testing
