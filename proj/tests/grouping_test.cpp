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

#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "qshape/error.hpp"
#include "qshape/quant.hpp"
#include "qshape/reshape.hpp"
#include "test_util.hpp"

namespace qshape {
namespace {

using testing::random_tensor;

std::vector<FilterRange> ranges(std::initializer_list<std::pair<std::size_t, std::size_t>> r) {
  std::vector<FilterRange> out;
  for (auto [b, e] : r) out.push_back({b, e});
  return out;
}

BatchNormParams identity_bn(std::size_t c) {
  return BatchNormParams{std::vector<float>(c, 1.0f), std::vector<float>(c, 0.0f),
                         std::vector<float>(c, 0.0f), std::vector<float>(c, 1.0f), 0.0f};
}

// Scheme with explicit (possibly uneven) boundaries.
GroupScheme scheme_from(std::vector<FilterRange> b) {
  GroupScheme s;
  s.group_size = 1;
  s.boundaries = std::move(b);
  return s;
}

TEST(PartitionFiltersTest, Examples) {
  EXPECT_EQ(partition_filters(8, 4).boundaries, ranges({{0, 4}, {4, 8}}));
  EXPECT_EQ(partition_filters(8, -1).boundaries, ranges({{0, 8}}));
  EXPECT_EQ(partition_filters(10, 4).boundaries, ranges({{0, 4}, {4, 8}, {8, 10}}));
  EXPECT_EQ(partition_filters(3, 1).boundaries, ranges({{0, 1}, {1, 2}, {2, 3}}));
  EXPECT_EQ(partition_filters(3, 16).boundaries, ranges({{0, 3}}));
  EXPECT_EQ(partition_filters(8, 4).group_size, 4);
}

TEST(PartitionFiltersTest, Invalid) {
  EXPECT_THROW(partition_filters(8, 0), InvalidArgument);
  EXPECT_THROW(partition_filters(8, -2), InvalidArgument);
  EXPECT_THROW(partition_filters(0, 4), InvalidArgument);
}

TEST(PartitionFiltersPropertyTest, PartitionsExactly) {
  for (std::size_t n = 1; n <= 40; ++n) {
    for (int gs : {-1, 1, 2, 3, 5, 7, 16, 64}) {
      const GroupScheme s = partition_filters(n, gs);
      EXPECT_NO_THROW(s.validate(n));
      std::size_t next = 0;
      for (const auto& r : s.boundaries) {
        EXPECT_EQ(r.begin, next);
        EXPECT_GT(r.end, r.begin);
        next = r.end;
      }
      EXPECT_EQ(next, n);
      for (std::size_t f = 0; f < n; ++f) {
        const auto& r = s.boundaries[s.group_of(f)];
        EXPECT_TRUE(f >= r.begin && f < r.end);
      }
    }
  }
}

TEST(GroupSchemeTest, ValidateRejectsBrokenPartitions) {
  EXPECT_THROW(scheme_from(ranges({{0, 4}, {5, 8}})).validate(8), InvalidArgument);
  EXPECT_THROW(scheme_from(ranges({{0, 4}})).validate(8), InvalidArgument);
  EXPECT_THROW(scheme_from({}).validate(8), InvalidArgument);
  GroupScheme s = partition_filters(8, 4);
  s.alphas = {1.0, -1.0};
  s.thresholds = {kNoReshape, kNoReshape};
  EXPECT_THROW(s.validate(8), InvalidArgument);
  s.alphas = {1.0};
  EXPECT_THROW(s.validate(8), InvalidArgument);
}

TEST(GroupOptimalAlphasTest, IdenticalFiltersShareTheLayerAlpha) {
  const Tensor filter = random_tensor({1, 3, 3, 3}, 5);
  Tensor w({6, 3, 3, 3});
  for (std::size_t f = 0; f < 6; ++f) {
    std::copy(filter.data(), filter.data() + 27, w.data() + f * 27);
  }
  const GroupScheme s = group_optimal_alphas(w, partition_filters(6, 2), 3);
  const double layer = optimal_alpha(w, 3, RangeMode::Symmetric).alpha_star;
  for (double a : s.alphas) EXPECT_NEAR(a, layer, 1e-6 * layer);
}

TEST(GroupOptimalAlphasTest, ScaleEquivariance) {
  const Tensor g1 = random_tensor({4, 16}, 21);
  Tensor w({8, 16});
  const float peak = max_abs(g1);
  for (std::size_t i = 0; i < 64; ++i) {
    w[i] = g1[i] / peak;
    w[64 + i] = 10.0f * g1[i] / peak;
  }
  const GroupScheme s = group_optimal_alphas(w, partition_filters(8, 4), 2);
  EXPECT_NEAR(s.alphas[1], 10.0 * s.alphas[0], 1e-5 * s.alphas[1]);
  // Independent scan agrees on both groups.
  const double scan0 = testing::scan_min_ql(group_span(w, s.boundaries[0]), 2);
  EXPECT_LE(testing::ref_ql(group_span(w, s.boundaries[0]), s.alphas[0], 2), scan0 + 1e-6);
}

TEST(GroupOptimalAlphasTest, ZeroNormGroupNamed) {
  Tensor w = random_tensor({4, 5}, 2);
  for (std::size_t i = 5; i < 10; ++i) w[i] = 0.0f;
  try {
    group_optimal_alphas(w, partition_filters(4, 1), 2);
    FAIL() << "expected ZeroNormError";
  } catch (const ZeroNormError& e) {
    EXPECT_NE(std::string(e.what()).find("group 1"), std::string::npos);
  }
}

TEST(CalibrateGroupsTest, ScaleClipUsesThreshold) {
  const Tensor w = random_tensor({8, 9}, 3);
  const GroupScheme s = calibrate_groups(w, partition_filters(8, 4), 2, 2.0,
                                         AlphaSource::ScaleClip);
  for (std::size_t g = 0; g < 2; ++g) {
    const double t = weight_threshold(group_span(w, s.boundaries[g]), 2.0);
    EXPECT_DOUBLE_EQ(s.thresholds[g], t);
    EXPECT_DOUBLE_EQ(s.alphas[g], t);
  }
  EXPECT_THROW(calibrate_groups(w, partition_filters(8, 4), 2, kNoReshape,
                                AlphaSource::ScaleClip),
               InvalidArgument);
}

TEST(CalibrateGroupsTest, QlSearchOnClippedGroup) {
  const Tensor w = random_tensor({8, 9}, 4);
  const GroupScheme s = calibrate_groups(w, partition_filters(8, 8), 3, 2.0,
                                         AlphaSource::QlSearch);
  const Tensor clipped = clip_weights(w, s.thresholds[0]);
  EXPECT_DOUBLE_EQ(s.alphas[0], optimal_alpha(clipped, 3, RangeMode::Symmetric).alpha_star);
  EXPECT_LE(quantized_loss(clipped, QuantSpec{3, RangeMode::Symmetric, s.alphas[0]}).ql,
            quantized_loss(clipped, QuantSpec{3, RangeMode::Symmetric, s.thresholds[0]}).ql);
}

TEST(AlphaSourceTest, StringRoundTrip) {
  for (auto s : {AlphaSource::ScaleClip, AlphaSource::QlSearch}) {
    EXPECT_EQ(alpha_source_from_string(to_string(s)), s);
  }
  EXPECT_EQ(to_string(AlphaSource::ScaleClip), "scale_clip");
  EXPECT_THROW(alpha_source_from_string("max"), InvalidArgument);
}

TEST(GroupQuantizeTest, SingleGroupEqualsPlainQuantize) {
  const Tensor w = random_tensor({6, 10}, 7);
  const GroupScheme s = group_optimal_alphas(w, partition_filters(6, -1), 3);
  const Tensor a = group_quantize(w, s, 3);
  const Tensor b = quantize(w, QuantSpec{3, RangeMode::Symmetric, s.alphas[0]});
  EXPECT_TRUE(bit_equal(a, b));
}

TEST(GroupQuantizeTest, PrescaledCopiesShareQl) {
  const Tensor g = random_tensor({2, 32}, 8);
  Tensor w({6, 32});
  const float scales[3] = {1.0f, 4.0f, 0.25f};
  for (std::size_t k = 0; k < 3; ++k) {
    for (std::size_t i = 0; i < 64; ++i) w[k * 64 + i] = scales[k] * g[i];
  }
  const GroupScheme s = group_optimal_alphas(w, partition_filters(6, 2), 2);
  const double single = optimal_alpha(g, 2, RangeMode::Symmetric).ql;
  EXPECT_NEAR(grouped_quantized_loss(w, s, 2), single, 1e-6);
}

TEST(GroupQuantizeTest, RequiresCalibration) {
  const Tensor w = random_tensor({4, 4}, 1);
  EXPECT_THROW(group_quantize(w, partition_filters(4, 2), 2), InvalidArgument);
  Tensor out;
  std::vector<std::uint8_t> mask;
  EXPECT_THROW(group_fake_quantize(w, partition_filters(4, 2), 2, out, mask), InvalidArgument);
}

TEST(GroupFakeQuantizeTest, ClipsThenQuantizesWithMask) {
  Tensor w({2, 3}, std::vector<float>{0.1f, 2.0f, -0.4f, 0.05f, -3.0f, 0.5f});
  GroupScheme s = partition_filters(2, 1);
  s.alphas = {0.6, 1.0};
  s.thresholds = {1.0, 0.8};
  Tensor out;
  std::vector<std::uint8_t> mask;
  group_fake_quantize(w, s, 2, out, mask);
  // Group 0: alpha 0.6 (grid {-0.6, 0, 0.6}); group 1: clip at 0.8 then alpha 1.
  EXPECT_FLOAT_EQ(out[0], 0.0f);
  EXPECT_FLOAT_EQ(out[1], 0.6f);
  EXPECT_FLOAT_EQ(out[2], -0.6f);
  EXPECT_FLOAT_EQ(out[3], 0.0f);
  EXPECT_FLOAT_EQ(out[4], -1.0f);
  EXPECT_FLOAT_EQ(out[5], 1.0f);
  EXPECT_EQ(mask, (std::vector<std::uint8_t>{1, 0, 1, 1, 0, 1}));
}

// Group QL never exceeds layer QL, checked against the exhaustive scan.
TEST(GroupQlInequalityTest, RandomTensorsAndPartitions) {
  std::mt19937_64 gen(99);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t filters = 2 + gen() % 15;
    const std::size_t per = 1 + gen() % 20;
    Tensor w = random_tensor({filters, per}, 1000 + trial);
    for (std::size_t f = 0; f < filters; ++f) {
      const float s = static_cast<float>(0.2 + 3.0 * (gen() % 100) / 100.0);
      for (std::size_t i = 0; i < per; ++i) w[f * per + i] *= s;
    }
    const int bits = 2 + static_cast<int>(gen() % 3);
    const int gs = 1 + static_cast<int>(gen() % filters);
    const GroupScheme grouped = group_optimal_alphas(w, partition_filters(filters, gs), bits);
    const double layer_scan = testing::scan_min_ql(w.values(), bits);
    const double layer = optimal_alpha(w, bits, RangeMode::Symmetric).ql;
    EXPECT_LE(grouped_quantized_loss(w, grouped, bits), layer + 1e-12) << "trial " << trial;
    EXPECT_LE(layer, layer_scan + 1e-6) << "trial " << trial;
  }
}

TEST(GroupQlInequalityTest, RefinementNeverIncreasesQl) {
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor w = random_tensor({16, 12}, 2000 + trial);
    double prev = INFINITY;
    for (int gs : {-1, 8, 4, 2, 1}) {
      const GroupScheme s = group_optimal_alphas(w, partition_filters(16, gs), 2);
      const double ql = grouped_quantized_loss(w, s, 2);
      EXPECT_LE(ql, prev + 1e-12) << "gs " << gs;
      prev = ql;
    }
  }
}

TEST(FoldTest, SingleGroupIsIdentity) {
  const Tensor w = random_tensor({4, 6}, 3);
  const GroupScheme s = group_optimal_alphas(w, partition_filters(4, -1), 2);
  const Tensor q = group_quantize(w, s, 2);
  const FoldResult r = fold_groups_into_bn(q, s, identity_bn(4));
  EXPECT_TRUE(bit_equal(r.weights, q));
  for (double v : r.plan.per_channel_scale) EXPECT_EQ(v, 1.0);
  EXPECT_EQ(r.bn.gamma, identity_bn(4).gamma);
}

TEST(FoldTest, HandComputedTwoGroups) {
  // alpha = {1, 2}, bits = 2: group 0 levels {-1, 0, 1}, group 1 levels {-2, 0, 2}.
  Tensor q({2, 2}, std::vector<float>{1.0f, -1.0f, 2.0f, 0.0f});
  GroupScheme s = partition_filters(2, 1);
  s.alphas = {1.0, 2.0};
  s.thresholds = {kNoReshape, kNoReshape};
  BatchNormParams bn = identity_bn(2);
  bn.running_mean = {0.5f, 0.25f};
  const FoldResult r = fold_groups_into_bn(q, s, bn);
  EXPECT_EQ(r.plan.reference_alpha, 2.0);
  EXPECT_EQ(r.plan.per_channel_scale, (std::vector<double>{0.5, 1.0}));
  EXPECT_EQ(r.weights[0], 2.0f);
  EXPECT_EQ(r.weights[1], -2.0f);
  EXPECT_EQ(r.weights[2], 2.0f);
  EXPECT_EQ(r.bn.gamma[0], 0.5f);
  EXPECT_EQ(r.bn.gamma[1], 1.0f);
  EXPECT_EQ(r.bn.running_mean[0], 1.0f);
  EXPECT_EQ(r.bn.running_mean[1], 0.25f);
  EXPECT_TRUE(on_shared_grid(r.weights.values(), 2, 2.0));
}

float bn_apply(float y, const BatchNormParams& bn, std::size_t c) {
  return bn.gamma[c] * (y - bn.running_mean[c]) / std::sqrt(bn.running_var[c] + bn.eps) +
         bn.beta[c];
}

TEST(FoldTest, ComposedAffineUnchanged) {
  std::mt19937_64 gen(5);
  std::uniform_real_distribution<float> u(0.5f, 2.0f);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t filters = 12, per = 18;
    Tensor w = random_tensor({filters, per}, 50 + trial);
    for (std::size_t f = 0; f < filters; ++f) {
      for (std::size_t i = 0; i < per; ++i) w[f * per + i] *= static_cast<float>(f + 1);
    }
    const GroupScheme s = group_optimal_alphas(w, partition_filters(filters, 4), 3);
    const Tensor q = group_quantize(w, s, 3);
    BatchNormParams bn = identity_bn(filters);
    bn.eps = 1e-5f;
    for (std::size_t c = 0; c < filters; ++c) {
      bn.gamma[c] = u(gen);
      bn.beta[c] = u(gen) - 1.0f;
      bn.running_mean[c] = u(gen) - 1.2f;
      bn.running_var[c] = u(gen);
    }
    const FoldResult r = fold_groups_into_bn(q, s, bn);
    EXPECT_TRUE(on_shared_grid(r.weights.values(), 3, r.plan.reference_alpha));
    const Tensor x = random_tensor({per}, 77 + trial);
    for (std::size_t c = 0; c < filters; ++c) {
      double y0 = 0.0, y1 = 0.0;
      for (std::size_t i = 0; i < per; ++i) {
        y0 += q[c * per + i] * x[i];
        y1 += r.weights[c * per + i] * x[i];
      }
      const float a = bn_apply(static_cast<float>(y0), bn, c);
      const float b = bn_apply(static_cast<float>(y1), r.bn, c);
      EXPECT_NEAR(b, a, 1e-5 * std::max(1.0f, std::fabs(a)));
    }
  }
}

TEST(FoldTest, ChannelMismatch) {
  const Tensor w = random_tensor({4, 3}, 1);
  const GroupScheme s = group_optimal_alphas(w, partition_filters(4, 2), 2);
  EXPECT_THROW(fold_groups_into_bn(group_quantize(w, s, 2), s, identity_bn(3)), FoldError);
}

TEST(SharedGridTest, DetectsOffGridValues) {
  EXPECT_TRUE(on_shared_grid(std::vector<float>{0.0f, 1.0f, -1.0f / 3.0f}, 3, 1.0));
  EXPECT_FALSE(on_shared_grid(std::vector<float>{0.5f}, 3, 1.0));
  EXPECT_FALSE(on_shared_grid(std::vector<float>{2.0f}, 3, 1.0));
  EXPECT_FALSE(on_shared_grid(std::vector<float>{0.0f}, 1, 1.0));
}

}  // namespace
}  // namespace qshape
