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

// Uniform fake quantization, relative L1 quantized-loss and the search for
// the clipping value that minimizes it.
//
// Symmetric (weights):  levels i * s, |i| <= 2^(bits-1) - 1, s = alpha / (2^(bits-1) - 1).
//                       bits == 1 is the binary grid {-alpha, +alpha}.
// NonNegative (acts):   levels i * s, 0 <= i <= 2^bits - 1, s = alpha / (2^bits - 1).
//
// Rounding is half away from zero.

#include <cstdint>
#include <span>
#include <string_view>

#include "qshape/tensor.hpp"

namespace qshape {

enum class RangeMode { Symmetric, NonNegative };

std::string_view to_string(RangeMode mode);

struct QuantSpec {
  int bits = 8;
  RangeMode mode = RangeMode::Symmetric;
  double alpha = 1.0;

  /// Throws InvalidArgument unless 1 <= bits <= 16 and alpha is finite and > 0.
  void validate() const;

  /// Largest integer level index (the grid is i * step() for |i| <= max_level()).
  int max_level() const noexcept;
  bool is_binary() const noexcept {
    return bits == 1 && mode == RangeMode::Symmetric;
  }
  double step() const noexcept;
};

struct QuantReport {
  double ql = 0.0;
  double alpha_star = 0.0;
  int bits = 0;
  int norm_order = 1;
};

/// Quantizes one value; `spec` must already be valid.
float quantize_value(float w, const QuantSpec& spec) noexcept;

/// Elementwise quantization. Rejects non-finite input with the offending index.
Tensor quantize(const Tensor& values, const QuantSpec& spec);
void quantize_into(std::span<const float> in, std::span<float> out,
                   const QuantSpec& spec);

/// sum |w - Q(w)| over the span, accumulated in double.
double quantization_error_l1(std::span<const float> values,
                             const QuantSpec& spec);

/// QL = sum |w - Q(w)| / sum |w|. Throws ZeroNormError for all-zero input.
QuantReport quantized_loss(std::span<const float> values, const QuantSpec& spec);
QuantReport quantized_loss(const Tensor& values, const QuantSpec& spec);

enum class AlphaSearch {
  /// Currently Exact.
  Auto,
  /// QL(alpha) is continuous and piecewise linear; enumerate every kink,
  /// in alpha windows of bounded size.
  Exact,
  /// Geometric+linear grid over (0, max|values|] with a short tail beyond it,
  /// then exact sweeps of every bracket whose slope bound could still beat
  /// the best grid point. Searches at most up to 2 max|values|.
  GridRefine,
};

/// argmin over alpha > 0 of QL. With three or more levels per side the
/// minimizer can exceed max|values|; QL is constant past 2 m max|values|.
/// Throws ZeroNormError for all-zero input.
QuantReport optimal_alpha(std::span<const float> values, int bits,
                          RangeMode mode, AlphaSearch method = AlphaSearch::Auto);
QuantReport optimal_alpha(const Tensor& values, int bits, RangeMode mode,
                          AlphaSearch method = AlphaSearch::Auto);

enum class Distribution { Laplace, Gaussian, Uniform };

std::string_view to_string(Distribution kind);

/// Deterministic samples for a fixed seed. `scale` is b for Laplace, sigma for
/// Gaussian and the half-width T for Uniform on [-T, T].
Tensor sample_distribution(Distribution kind, double scale, std::size_t count,
                           std::uint64_t seed);

/// E|x| of the distribution with the given scale.
double analytic_mean_abs(Distribution kind, double scale);

/// Scale parameter that yields E|x| == mean_abs.
double scale_for_mean_abs(Distribution kind, double mean_abs);

}  // namespace qshape
