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

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace qshape {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major float32 array.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t ndim() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same data viewed with another shape of equal element count.
  Tensor reshaped(Shape shape) const;

  void fill(float v);

  /// Length of one slice along the leading dimension (e.g. one filter).
  std::size_t row_size() const;

  std::span<float> row(std::size_t i);
  std::span<const float> row(std::size_t i) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Bitwise equality of shape and payload (distinguishes -0.0f from 0.0f).
bool bit_equal(const Tensor& a, const Tensor& b);

std::optional<std::size_t> find_non_finite(std::span<const float> values);

/// Throws NonFiniteError naming `where` and the first offending flat index.
void require_finite(std::span<const float> values, std::string_view where);

double sum_abs(std::span<const float> values);
double mean_abs(std::span<const float> values);
float max_abs(std::span<const float> values);

inline double sum_abs(const Tensor& t) { return sum_abs(t.values()); }
inline double mean_abs(const Tensor& t) { return mean_abs(t.values()); }
inline float max_abs(const Tensor& t) { return max_abs(t.values()); }

}  // namespace qshape
