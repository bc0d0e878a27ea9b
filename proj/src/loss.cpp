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
#include "qshape/nn.hpp"

namespace qshape {

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.ndim() != 2 || logits.dim(0) != labels.size()) {
    throw ShapeError("cross-entropy expects [N, C] logits and N labels");
  }
  require_finite(logits.values(), "logits");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  LossResult r{0.0, Tensor(logits.shape())};
  std::vector<double> p(c);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= c) {
      throw InvalidArgument("label " + std::to_string(label) + " out of range [0, " +
                            std::to_string(c) + ")");
    }
    const float* row = logits.data() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      p[j] = std::exp(static_cast<double>(row[j]) - mx);
      z += p[j];
    }
    r.loss += std::log(z) - (static_cast<double>(row[label]) - mx);
    for (std::size_t j = 0; j < c; ++j) {
      const double target = j == static_cast<std::size_t>(label) ? 1.0 : 0.0;
      r.grad[i * c + j] = static_cast<float>((p[j] / z - target) / static_cast<double>(n));
    }
  }
  r.loss /= static_cast<double>(n);
  return r;
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.dim(0), c = logits.row_size();
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = logits.data() + i * c;
    out[i] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

}  // namespace qshape
