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
#include "qshape/grouping.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "qshape/error.hpp"
#include "qshape/quant.hpp"
#include "qshape/reshape.hpp"

namespace qshape {

std::string_view to_string(AlphaSource source) {
  return source == AlphaSource::ScaleClip ? "scale_clip" : "ql_search";
}

AlphaSource alpha_source_from_string(std::string_view name) {
  if (name == "scale_clip") return AlphaSource::ScaleClip;
  if (name == "ql_search") return AlphaSource::QlSearch;
  throw InvalidArgument("unknown alpha_source '" + std::string(name) +
                        "' (expected scale_clip or ql_search)");
}

std::size_t GroupScheme::group_of(std::size_t filter) const {
  auto it = std::upper_bound(
      boundaries.begin(), boundaries.end(), filter,
      [](std::size_t f, const FilterRange& r) { return f < r.end; });
  if (it == boundaries.end()) {
    throw InvalidArgument("filter " + std::to_string(filter) +
                          " outside group scheme");
  }
  return static_cast<std::size_t>(it - boundaries.begin());
}

void GroupScheme::validate(std::size_t n_filters) const {
  if (boundaries.empty()) throw InvalidArgument("group scheme has no groups");
  std::size_t expect = 0;
  for (const auto& r : boundaries) {
    if (r.begin != expect || r.end <= r.begin) {
      throw InvalidArgument("group boundaries are not a contiguous partition");
    }
    expect = r.end;
  }
  if (expect != n_filters) {
    throw InvalidArgument("group boundaries cover " + std::to_string(expect) +
                          " filters, layer has " + std::to_string(n_filters));
  }
  if (!alphas.empty() && alphas.size() != boundaries.size()) {
    throw InvalidArgument("group scheme: alpha count differs from group count");
  }
  if (!thresholds.empty() && thresholds.size() != boundaries.size()) {
    throw InvalidArgument("group scheme: threshold count differs from group count");
  }
  for (double a : alphas) {
    if (!(a > 0.0) || !std::isfinite(a)) {
      throw InvalidArgument("group scheme: alphas must be finite and positive");
    }
  }
}

GroupScheme partition_filters(std::size_t n_filters, int gs) {
  if (n_filters == 0) throw InvalidArgument("partition_filters: no filters");
  if (gs == 0 || gs < kWholeLayer) {
    throw InvalidArgument("invalid group size " + std::to_string(gs) +
                          " (expected >= 1 or -1)");
  }
  GroupScheme scheme;
  scheme.group_size = gs;
  const std::size_t step =
      gs == kWholeLayer ? n_filters : static_cast<std::size_t>(gs);
  for (std::size_t b = 0; b < n_filters; b += step) {
    scheme.boundaries.push_back({b, std::min(n_filters, b + step)});
  }
  return scheme;
}

std::span<const float> group_span(const Tensor& weights, const FilterRange& range) {
  const std::size_t per = weights.row_size();
  return weights.values().subspan(range.begin * per, range.size() * per);
}

std::span<float> group_span(Tensor& weights, const FilterRange& range) {
  const std::size_t per = weights.row_size();
  return weights.values().subspan(range.begin * per, range.size() * per);
}

namespace {

void check_layout(const Tensor& weights, const GroupScheme& scheme) {
  if (weights.ndim() < 1) throw ShapeError("grouped weights need a filter axis");
  scheme.validate(weights.dim(0));
}

std::string group_name(std::size_t g, const FilterRange& r) {
  std::ostringstream os;
  os << "group " << g << " (filters " << r.begin << ".." << r.end << ")";
  return os.str();
}

}  // namespace

GroupScheme group_optimal_alphas(const Tensor& weights, GroupScheme scheme,
                                 int bits) {
  return calibrate_groups(weights, std::move(scheme), bits, kNoReshape,
                          AlphaSource::QlSearch);
}

GroupScheme calibrate_groups(const Tensor& weights, GroupScheme scheme, int bits,
                             double k_w, AlphaSource source) {
  check_layout(weights, scheme);
  if (source == AlphaSource::ScaleClip && k_w == kNoReshape) {
    throw InvalidArgument("alpha_source scale_clip requires a finite k_w");
  }
  scheme.alphas.assign(scheme.group_count(), 0.0);
  scheme.thresholds.assign(scheme.group_count(), kNoReshape);
  std::vector<float> clipped;
  for (std::size_t g = 0; g < scheme.group_count(); ++g) {
    const auto& r = scheme.boundaries[g];
    const auto group = group_span(weights, r);
    if (sum_abs(group) == 0.0) {
      throw ZeroNormError(group_name(g, r) + " has zero L1 norm");
    }
    const double t = weight_threshold(group, k_w);
    scheme.thresholds[g] = t;
    if (source == AlphaSource::ScaleClip) {
      scheme.alphas[g] = t;
      continue;
    }
    clipped.assign(group.begin(), group.end());
    clip_weights_inplace(clipped, t);
    scheme.alphas[g] = optimal_alpha(clipped, bits, RangeMode::Symmetric).alpha_star;
  }
  return scheme;
}

void project_groups(Tensor& weights, const GroupScheme& scheme, double k_w) {
  check_layout(weights, scheme);
  if (k_w == kNoReshape) return;
  for (const auto& r : scheme.boundaries) {
    auto group = group_span(weights, r);
    if (sum_abs(group) == 0.0) continue;
    clip_weights_inplace(group, weight_threshold(group, k_w));
  }
}

Tensor group_quantize(const Tensor& weights, const GroupScheme& scheme, int bits) {
  check_layout(weights, scheme);
  if (scheme.alphas.size() != scheme.group_count()) {
    throw InvalidArgument("group_quantize: scheme alphas not calibrated");
  }
  Tensor out(weights.shape());
  for (std::size_t g = 0; g < scheme.group_count(); ++g) {
    const auto& r = scheme.boundaries[g];
    quantize_into(group_span(weights, r), group_span(out, r),
                  QuantSpec{bits, RangeMode::Symmetric, scheme.alphas[g]});
  }
  return out;
}

void group_fake_quantize(const Tensor& latent, const GroupScheme& scheme,
                         int bits, Tensor& out,
                         std::vector<std::uint8_t>& pass_mask) {
  check_layout(latent, scheme);
  if (!scheme.calibrated()) {
    throw InvalidArgument("group_fake_quantize: scheme not calibrated");
  }
  require_finite(latent.values(), "weight fake-quantize");
  if (out.shape() != latent.shape()) out = Tensor(latent.shape());
  pass_mask.assign(latent.numel(), 0);
  const std::size_t per = latent.row_size();
  for (std::size_t g = 0; g < scheme.group_count(); ++g) {
    const auto& r = scheme.boundaries[g];
    const QuantSpec spec{bits, RangeMode::Symmetric, scheme.alphas[g]};
    spec.validate();
    const double t = scheme.thresholds[g];
    const float tf = static_cast<float>(t);
    const double limit = std::min(t, spec.alpha);
    for (std::size_t i = r.begin * per; i < r.end * per; ++i) {
      float w = latent[i];
      pass_mask[i] = std::fabs(static_cast<double>(w)) <= limit ? 1 : 0;
      if (t != kNoReshape) w = std::clamp(w, -tf, tf);
      out[i] = quantize_value(w, spec);
    }
  }
}

double grouped_quantized_loss(const Tensor& weights, const GroupScheme& scheme,
                              int bits) {
  check_layout(weights, scheme);
  const double norm = sum_abs(weights.values());
  if (norm == 0.0) throw ZeroNormError("grouped quantized-loss: zero-norm weights");
  double err = 0.0;
  for (std::size_t g = 0; g < scheme.group_count(); ++g) {
    err += quantization_error_l1(
        group_span(weights, scheme.boundaries[g]),
        QuantSpec{bits, RangeMode::Symmetric, scheme.alphas.at(g)});
  }
  return err / norm;
}

FoldResult fold_groups_into_bn(const Tensor& quantized, const GroupScheme& scheme,
                               const BatchNormParams& bn) {
  check_layout(quantized, scheme);
  if (scheme.alphas.size() != scheme.group_count()) {
    throw InvalidArgument("fold: scheme alphas not calibrated");
  }
  const std::size_t filters = quantized.dim(0);
  if (bn.channels() != filters || bn.beta.size() != filters ||
      bn.running_mean.size() != filters || bn.running_var.size() != filters) {
    throw FoldError("fold: batch norm has " + std::to_string(bn.channels()) +
                    " channels, layer has " + std::to_string(filters) + " filters");
  }
  FoldResult result;
  result.plan.reference_alpha =
      *std::max_element(scheme.alphas.begin(), scheme.alphas.end());
  result.plan.per_channel_scale.assign(filters, 1.0);
  result.weights = quantized;
  result.bn = bn;
  if (scheme.group_count() == 1) return result;

  const double ref = result.plan.reference_alpha;
  for (std::size_t g = 0; g < scheme.group_count(); ++g) {
    const auto& r = scheme.boundaries[g];
    const double ratio = scheme.alphas[g] / ref;
    if (ratio == 1.0) continue;
    for (float& w : group_span(result.weights, r)) {
      w = static_cast<float>(static_cast<double>(w) / ratio);
    }
    for (std::size_t c = r.begin; c < r.end; ++c) {
      result.plan.per_channel_scale[c] = ratio;
      result.bn.gamma[c] = static_cast<float>(bn.gamma[c] * ratio);
      result.bn.running_mean[c] = static_cast<float>(bn.running_mean[c] / ratio);
    }
  }
  return result;
}

bool on_shared_grid(std::span<const float> weights, int bits,
                    double reference_alpha, double rel_tol) {
  const QuantSpec spec{bits, RangeMode::Symmetric, reference_alpha};
  const double step = spec.step();
  const int m = spec.max_level();
  for (float w : weights) {
    const double level = static_cast<double>(w) / step;
    const double nearest = std::round(level);
    if (std::fabs(level - nearest) > rel_tol || std::fabs(nearest) > m) return false;
    if (spec.is_binary() && nearest == 0.0) return false;
  }
  return true;
}

}  // namespace qshape
