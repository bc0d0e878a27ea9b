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
#include "qshape/quant.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>
#include <utility>
#include <vector>

#include "qshape/error.hpp"

namespace qshape {

std::string_view to_string(RangeMode mode) {
  return mode == RangeMode::Symmetric ? "symmetric" : "nonnegative";
}

std::string_view to_string(Distribution kind) {
  switch (kind) {
    case Distribution::Laplace:
      return "laplace";
    case Distribution::Gaussian:
      return "gaussian";
    case Distribution::Uniform:
      return "uniform";
  }
  return "unknown";
}

void QuantSpec::validate() const {
  if (bits < 1 || bits > 16) {
    throw InvalidArgument("invalid quant spec: bits must be in [1, 16], got " +
                          std::to_string(bits));
  }
  if (!std::isfinite(alpha) || alpha <= 0.0) {
    std::ostringstream os;
    os << "invalid quant spec: alpha must be finite and > 0, got " << alpha;
    throw InvalidArgument(os.str());
  }
}

int QuantSpec::max_level() const noexcept {
  if (mode == RangeMode::NonNegative) return (1 << bits) - 1;
  if (bits == 1) return 1;
  return (1 << (bits - 1)) - 1;
}

double QuantSpec::step() const noexcept {
  return alpha / static_cast<double>(max_level());
}

float quantize_value(float w, const QuantSpec& spec) noexcept {
  const double a = spec.alpha;
  if (spec.is_binary()) {
    return static_cast<float>(w >= 0.0f ? a : -a);
  }
  const double lo = spec.mode == RangeMode::Symmetric ? -a : 0.0;
  const double x = std::clamp(static_cast<double>(w), lo, a);
  const int m = spec.max_level();
  const double level = std::round(x / spec.step());
  if (level >= m) return static_cast<float>(a);
  if (level <= -m) return static_cast<float>(-a);
  return static_cast<float>(level * spec.step());
}

void quantize_into(std::span<const float> in, std::span<float> out,
                   const QuantSpec& spec) {
  spec.validate();
  if (in.size() != out.size()) throw ShapeError("quantize_into: size mismatch");
  require_finite(in, "quantize");
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = quantize_value(in[i], spec);
}

Tensor quantize(const Tensor& values, const QuantSpec& spec) {
  Tensor out(values.shape());
  quantize_into(values.values(), out.values(), spec);
  return out;
}

double quantization_error_l1(std::span<const float> values,
                             const QuantSpec& spec) {
  double err = 0.0;
  for (float w : values) {
    err += std::fabs(static_cast<double>(w) -
                     static_cast<double>(quantize_value(w, spec)));
  }
  return err;
}

QuantReport quantized_loss(std::span<const float> values,
                           const QuantSpec& spec) {
  spec.validate();
  require_finite(values, "quantized_loss");
  const double norm = sum_abs(values);
  if (norm == 0.0) {
    throw ZeroNormError("quantized-loss undefined: input has zero L1 norm");
  }
  return QuantReport{quantization_error_l1(values, spec) / norm, spec.alpha,
                     spec.bits, 1};
}

QuantReport quantized_loss(const Tensor& values, const QuantSpec& spec) {
  return quantized_loss(values.values(), spec);
}

namespace {

struct Kink {
  double alpha;
  double dslope;
};

// Magnitude that the quantizer error depends on, or a negative value when the
// element contributes a constant |w| (NonNegative mode, w < 0).
double effective_magnitude(float w, RangeMode mode) {
  if (mode == RangeMode::Symmetric) return std::fabs(static_cast<double>(w));
  return w > 0.0f ? static_cast<double>(w) : -1.0;
}

double peak_magnitude(std::span<const float> values, RangeMode mode) {
  double top = 0.0;
  for (float w : values) top = std::max(top, effective_magnitude(w, mode));
  // NonNegative with no positive entry: every alpha gives the same loss.
  return top > 0.0 ? top : static_cast<double>(max_abs(values));
}

// Past 2 m max|x| every element rounds to zero and the loss stays constant.
double loss_support_end(double peak, int bits, RangeMode mode) {
  const QuantSpec probe{bits, mode, 1.0};
  if (probe.is_binary()) return peak;
  return 2.0 * static_cast<double>(probe.max_level()) * peak;
}

double error_at(std::span<const float> values, int bits, RangeMode mode,
                double alpha) {
  return quantization_error_l1(values, QuantSpec{bits, mode, alpha});
}

// Kinks of one element with magnitude x > 0 inside (lo, hi], as
// (alpha, slope change) pairs.
template <typename F>
void for_each_kink(double x, double md, double lo, double hi, F&& emit) {
  if (x > lo && x <= hi) emit(x, 2.0);
  const double jmax = lo > 0.0 ? std::min(md - 1.0, std::floor(x * md / lo)) : md - 1.0;
  const double jmin = std::max(0.0, std::ceil(x * md / hi - 0.5));
  for (double jd = jmax; jd >= jmin; jd -= 1.0) {
    const double sw = x * md / (jd + 0.5);
    if (sw > lo && sw <= hi) emit(sw, -(2.0 * jd + 1.0) / md);
    if (jd >= 1.0) {
      const double cross = x * md / jd;
      if (cross > lo && cross <= hi) emit(cross, 2.0 * jd / md);
    }
  }
}

std::size_t count_kinks(std::span<const float> values, int bits, RangeMode mode,
                        double lo, double hi) {
  const QuantSpec probe{bits, mode, 1.0};
  const double md = static_cast<double>(probe.max_level());
  std::size_t count = 0;
  for (float w : values) {
    const double x = effective_magnitude(w, mode);
    if (x <= 0.0) continue;
    if (probe.is_binary()) {
      count += x > lo && x <= hi;
      continue;
    }
    for_each_kink(x, md, lo, hi, [&](double, double) { ++count; });
  }
  return count;
}

struct Candidate {
  double alpha;
  double error;
};

// Sum of per-element errors is continuous and piecewise linear in alpha. Each
// element with magnitude x > 0 and grid size m changes slope at
//   x                    clamp releases (slope -1 -> +1)
//   x m / (j + 1/2)      rounding switches level j+1 -> j
//   x m / j              level j crosses x
// Sweeping the sorted kinks inside [lo, hi] yields the error at every
// candidate minimum of that window.
Candidate sweep_window(std::span<const float> values, int bits, RangeMode mode,
                       double lo, double hi, std::size_t recheck) {
  const QuantSpec probe{bits, mode, 1.0};
  const bool binary = probe.is_binary();
  const int m = probe.max_level();
  const double md = static_cast<double>(m);

  std::vector<Kink> kinks;
  double slope = 0.0;
  double value = lo > 0.0 ? error_at(values, bits, mode, lo) : sum_abs(values);
  for (float w : values) {
    const double x = effective_magnitude(w, mode);
    if (binary) {
      if (x < 0.0) continue;
      slope += x == 0.0 || lo >= x ? 1.0 : -1.0;  // Q(0) = +alpha
      if (x > lo && x <= hi) kinks.push_back({x, 2.0});
      continue;
    }
    if (x <= 0.0) continue;
    // Slope just right of lo.
    if (lo > 0.0) {
      const double u = x * md / lo;
      const double j = std::clamp(std::ceil(u - 0.5), 0.0, md);
      if (j > 0.0) slope += (j * lo / md >= x ? 1.0 : -1.0) * j / md;
    } else {
      slope -= 1.0;
    }
    for_each_kink(x, md, lo, hi, [&](double a, double d) { kinks.push_back({a, d}); });
  }
  std::sort(kinks.begin(), kinks.end(),
            [](const Kink& a, const Kink& b) { return a.alpha < b.alpha; });

  std::vector<std::pair<double, double>> candidates;  // (approx error, alpha)
  candidates.reserve(kinks.size() + 2);
  if (lo > 0.0) candidates.emplace_back(value, lo);
  double at = lo;
  for (std::size_t i = 0; i < kinks.size();) {
    const double a = kinks[i].alpha;
    value += slope * (a - at);
    at = a;
    while (i < kinks.size() && kinks[i].alpha == a) slope += kinks[i++].dslope;
    candidates.emplace_back(value, a);
  }
  candidates.emplace_back(value + slope * (hi - at), hi);

  const std::size_t keep = std::min(recheck, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + keep,
                    candidates.end());
  Candidate best{hi, error_at(values, bits, mode, hi)};
  for (std::size_t i = 0; i < keep; ++i) {
    const double a = candidates[i].second;
    if (a <= 0.0) continue;
    const double e = error_at(values, bits, mode, a);
    if (e < best.error || (e == best.error && a < best.alpha)) best = {a, e};
  }
  return best;
}

// Exact sweep over (0, end], split into windows of at most kWindowKinks kinks
// so memory stays bounded for large tensors.
Candidate exact_search(std::span<const float> values, int bits, RangeMode mode,
                       double end) {
  constexpr std::size_t kWindowKinks = std::size_t{1} << 22;
  Candidate best{end, INFINITY};
  std::vector<std::pair<double, double>> pending{{0.0, end}};
  while (!pending.empty()) {
    const auto [lo, hi] = pending.back();
    pending.pop_back();
    const double mid = 0.5 * (lo + hi);
    if (count_kinks(values, bits, mode, lo, hi) > kWindowKinks && mid > lo && mid < hi) {
      pending.emplace_back(mid, hi);
      pending.emplace_back(lo, mid);
      continue;
    }
    const Candidate c = sweep_window(values, bits, mode, lo, hi, 16);
    if (c.error < best.error || (c.error == best.error && c.alpha < best.alpha)) best = c;
  }
  return best;
}

// Hybrid grid over (0, peak] plus a sparse tail up to 2 peak. Every element
// moves the loss by at most |d alpha|, which bounds the minimum inside each
// bracket; brackets whose bound beats the incumbent get an exact sweep, best
// bound first, so memory stays proportional to one bracket's kinks.
Candidate grid_refine_search(std::span<const float> values, int bits,
                             RangeMode mode, double peak, double end) {
  constexpr int kLinear = 512;
  constexpr int kGeometric = 512;
  constexpr int kTail = 64;
  constexpr double kGeometricFloor = 1e-3;
  std::vector<double> grid;
  grid.reserve(kLinear + kGeometric + kTail);
  for (int i = 1; i <= kLinear; ++i) grid.push_back(peak * i / kLinear);
  for (int i = 0; i < kGeometric; ++i) {
    const double t = 1.0 - static_cast<double>(i) / (kGeometric - 1);
    grid.push_back(peak * std::pow(kGeometricFloor, t));
  }
  const double tail_end = std::min(end, 2.0 * peak);
  for (int i = 1; i <= kTail && tail_end > peak; ++i) {
    grid.push_back(peak + (tail_end - peak) * i / kTail);
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  double lipschitz = 0.0;
  for (float w : values) lipschitz += effective_magnitude(w, mode) >= 0.0 ? 1.0 : 0.0;

  std::vector<double> error(grid.size());
  Candidate best{grid[0], INFINITY};
  for (std::size_t i = 0; i < grid.size(); ++i) {
    error[i] = error_at(values, bits, mode, grid[i]);
    if (error[i] < best.error) best = {grid[i], error[i]};
  }

  struct Bracket {
    double bound;
    double lo;
    double hi;
  };
  std::vector<Bracket> brackets;
  brackets.reserve(grid.size());
  double prev_alpha = 0.0;
  double prev_error = sum_abs(values);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double bound =
        0.5 * (prev_error + error[i] - lipschitz * (grid[i] - prev_alpha));
    brackets.push_back({bound, prev_alpha, grid[i]});
    prev_alpha = grid[i];
    prev_error = error[i];
  }
  std::sort(brackets.begin(), brackets.end(),
            [](const Bracket& a, const Bracket& b) { return a.bound < b.bound; });
  for (const auto& b : brackets) {
    if (b.bound >= best.error) break;
    const Candidate c = sweep_window(values, bits, mode, b.lo, b.hi, 2);
    if (c.error < best.error || (c.error == best.error && c.alpha < best.alpha)) best = c;
  }
  return best;
}

}  // namespace

QuantReport optimal_alpha(std::span<const float> values, int bits,
                          RangeMode mode, AlphaSearch method) {
  QuantSpec{bits, mode, 1.0}.validate();
  require_finite(values, "optimal_alpha");
  const double norm = sum_abs(values);
  if (norm == 0.0) {
    throw ZeroNormError("optimal alpha undefined: input has zero L1 norm");
  }
  const double peak = peak_magnitude(values, mode);

  const double end = loss_support_end(peak, bits, mode);
  const Candidate best = method == AlphaSearch::GridRefine
                             ? grid_refine_search(values, bits, mode, peak, end)
                             : exact_search(values, bits, mode, end);
  return QuantReport{best.error / norm, best.alpha, bits, 1};
}

QuantReport optimal_alpha(const Tensor& values, int bits, RangeMode mode,
                          AlphaSearch method) {
  return optimal_alpha(values.values(), bits, mode, method);
}

namespace {

// Uniform double in the open interval (0, 1).
double open_unit(std::mt19937_64& gen) {
  return (static_cast<double>(gen() >> 11) + 0.5) * 0x1.0p-53;
}

}  // namespace

Tensor sample_distribution(Distribution kind, double scale, std::size_t count,
                           std::uint64_t seed) {
  if (count == 0) throw InvalidArgument("sample_distribution: count must be > 0");
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw InvalidArgument("sample_distribution: scale must be finite and > 0");
  }
  std::mt19937_64 gen(seed);
  Tensor out({count});
  switch (kind) {
    case Distribution::Uniform:
      for (std::size_t i = 0; i < count; ++i) {
        out[i] = static_cast<float>(scale * (2.0 * open_unit(gen) - 1.0));
      }
      break;
    case Distribution::Gaussian:
      for (std::size_t i = 0; i < count; i += 2) {
        const double r = std::sqrt(-2.0 * std::log(open_unit(gen)));
        const double theta = 2.0 * std::numbers::pi * open_unit(gen);
        out[i] = static_cast<float>(scale * r * std::cos(theta));
        if (i + 1 < count) out[i + 1] = static_cast<float>(scale * r * std::sin(theta));
      }
      break;
    case Distribution::Laplace:
      for (std::size_t i = 0; i < count; ++i) {
        const double u = open_unit(gen) - 0.5;
        const double mag = -scale * std::log(1.0 - 2.0 * std::fabs(u));
        out[i] = static_cast<float>(u < 0.0 ? -mag : mag);
      }
      break;
  }
  return out;
}

double analytic_mean_abs(Distribution kind, double scale) {
  switch (kind) {
    case Distribution::Laplace:
      return scale;
    case Distribution::Gaussian:
      return scale * std::sqrt(2.0 / std::numbers::pi);
    case Distribution::Uniform:
      return scale / 2.0;
  }
  return 0.0;
}

double scale_for_mean_abs(Distribution kind, double mean_abs) {
  return mean_abs / analytic_mean_abs(kind, 1.0);
}

}  // namespace qshape
