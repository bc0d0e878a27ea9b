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
#include "qshape/reshape.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "qshape/error.hpp"
#include "qshape/quant.hpp"
#include "test_util.hpp"

namespace qshape {
namespace {

TEST(ClipConfigTest, Validation) {
  EXPECT_NO_THROW((ClipConfig{}).validate());
  EXPECT_NO_THROW((ClipConfig{2.0, 4.0, 0.01}).validate());
  EXPECT_NO_THROW((ClipConfig{1.0, 4.0, 1.0}).validate());
  EXPECT_THROW((ClipConfig{0.5, 4.0, 0.01}).validate(), InvalidArgument);
  EXPECT_THROW((ClipConfig{2.0, 0.0, 0.01}).validate(), InvalidArgument);
  EXPECT_THROW((ClipConfig{2.0, 4.0, 0.0}).validate(), InvalidArgument);
  EXPECT_THROW((ClipConfig{2.0, 4.0, 1.5}).validate(), InvalidArgument);
  EXPECT_THROW((ClipConfig{NAN, 4.0, 0.1}).validate(), InvalidArgument);
  EXPECT_FALSE((ClipConfig{}).reshapes_weights());
  EXPECT_TRUE((ClipConfig{2.0}).reshapes_weights());
}

TEST(WeightThresholdTest, Examples) {
  const std::vector<float> w{0.1f, -0.3f};
  EXPECT_NEAR(weight_threshold(w, 3.0), 0.6, 1e-7);
  EXPECT_EQ(weight_threshold(w, kNoReshape), kNoReshape);
  const Tensor u = testing::uniform_tensor({200000}, 4, -1.0, 1.0);
  EXPECT_NEAR(weight_threshold(u, 2.0), 1.0, 0.01);
}

TEST(WeightThresholdTest, EmptyRejected) {
  EXPECT_THROW(weight_threshold(std::span<const float>{}, 2.0), InvalidArgument);
}

TEST(ClipWeightsTest, Examples) {
  const Tensor w({3}, std::vector<float>{-5.0f, 0.2f, 5.0f});
  const Tensor c = clip_weights(w, 1.0);
  EXPECT_EQ(c[0], -1.0f);
  EXPECT_EQ(c[1], 0.2f);
  EXPECT_EQ(c[2], 1.0f);
  EXPECT_TRUE(bit_equal(clip_weights(w, kNoReshape), w));
  EXPECT_TRUE(bit_equal(clip_weights(w, 10.0), w));
  EXPECT_THROW(clip_weights(w, 0.0), InvalidArgument);
}

TEST(ClipWeightsPropertyTest, IdempotentAndShrinking) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor w = testing::random_tensor({257}, seed);
    const double t = 0.2 + 0.1 * static_cast<double>(seed);
    const Tensor once = clip_weights(w, t);
    EXPECT_TRUE(bit_equal(clip_weights(once, t), once));
    const bool any_above = max_abs(w) > t;
    if (any_above) {
      EXPECT_LT(sum_abs(once), sum_abs(w));
    } else {
      EXPECT_EQ(sum_abs(once), sum_abs(w));
    }
    for (std::size_t i = 0; i < w.numel(); ++i) {
      if (std::fabs(w[i]) < t) {
        EXPECT_EQ(once[i], w[i]);
      }
    }
  }
}

TEST(ActivationTrackerTest, FirstUpdateInitializes) {
  const auto t = update_activation_threshold({}, 0.5, 4.0, 0.01);
  EXPECT_TRUE(t.initialized);
  EXPECT_DOUBLE_EQ(t.t_a, 2.0);
  EXPECT_EQ(t.update_count, 1u);
}

TEST(ActivationTrackerTest, OneDescentStep) {
  ActivationTracker t{2.0, true, 1};
  t = update_activation_threshold(t, 0.25, 4.0, 0.5);
  EXPECT_DOUBLE_EQ(t.t_a, 1.5);
  EXPECT_EQ(t.update_count, 2u);
}

TEST(ActivationTrackerTest, FixedPoint) {
  for (double lambda : {0.01, 0.3, 1.0}) {
    ActivationTracker t{3.0, true, 5};
    t = update_activation_threshold(t, 0.75, 4.0, lambda);
    EXPECT_DOUBLE_EQ(t.t_a, 3.0);
  }
}

TEST(ActivationTrackerTest, GeometricConvergence) {
  ActivationTracker t{10.0, true, 1};
  const double m = 2.0;
  double prev = std::fabs(t.t_a - m);
  for (int i = 0; i < 200; ++i) {
    t = update_activation_threshold(t, m / 4.0, 4.0, 0.1);
    const double gap = std::fabs(t.t_a - m);
    EXPECT_LE(gap, prev * 0.9 + 1e-15);
    prev = gap;
  }
  EXPECT_LT(std::fabs(t.t_a - m), 1e-4 * m);
}

TEST(ActivationTrackerTest, SpanOverload) {
  const std::vector<float> a{0.0f, 1.0f, -1.0f, 2.0f};
  const auto t = update_activation_threshold({}, a, 2.0, 0.1);
  EXPECT_DOUBLE_EQ(t.t_a, 2.0);
}

TEST(ActivationTrackerTest, Errors) {
  EXPECT_THROW(update_activation_threshold({}, 0.0, 4.0, 0.1), InvalidArgument);
  EXPECT_THROW(update_activation_threshold({}, std::span<const float>{}, 4.0, 0.1),
               InvalidArgument);
  EXPECT_THROW(update_activation_threshold({}, 1.0, 4.0, 0.0), InvalidArgument);
  EXPECT_THROW(update_activation_threshold({}, NAN, 4.0, 0.1), InvalidArgument);
  const std::vector<float> bad{1.0f, NAN};
  EXPECT_THROW(update_activation_threshold({}, bad, 4.0, 0.1), NonFiniteError);
}

TEST(ReshapeMetricsTest, AnalyticKurtosis) {
  const std::size_t n = 1000000;
  EXPECT_NEAR(reshape_metrics(sample_distribution(Distribution::Uniform, 1.0, n, 1).values())
                  .excess_kurtosis,
              -1.2, 0.02);
  EXPECT_NEAR(reshape_metrics(sample_distribution(Distribution::Gaussian, 1.0, n, 2).values())
                  .excess_kurtosis,
              0.0, 0.02);
  std::vector<float> two_point(1000);
  for (std::size_t i = 0; i < two_point.size(); ++i) two_point[i] = i % 2 ? 0.3f : -0.3f;
  EXPECT_NEAR(reshape_metrics(two_point).excess_kurtosis, -2.0, 1e-9);
  EXPECT_EQ(reshape_metrics(two_point).clip_fraction_at_2mean, 0.0);
}

TEST(ReshapeMetricsTest, ClipFraction) {
  // mean|w| = 1, so exactly the single 3.0 sits at or beyond 2.
  const std::vector<float> w{0.5f, -0.5f, 0.0f, 3.0f, -1.0f, 1.0f};
  EXPECT_NEAR(reshape_metrics(w).clip_fraction_at_2mean, 1.0 / 6.0, 1e-12);
}

TEST(ReshapeMetricsTest, DegenerateInputRejected) {
  EXPECT_THROW(reshape_metrics(std::vector<float>{1.0f, 1.0f, 1.0f, 1.0f}), InvalidArgument);
  EXPECT_THROW(reshape_metrics(std::vector<float>{1.0f, 2.0f}), InvalidArgument);
}

TEST(ReshapeEffectTest, ClippingGaussianFlattensAndLowersQl) {
  const Tensor w = sample_distribution(Distribution::Gaussian, 1.0, 20000, 8);
  const Tensor c = clip_weights(w, weight_threshold(w, 2.0));
  EXPECT_LT(reshape_metrics(c.values()).excess_kurtosis,
            reshape_metrics(w.values()).excess_kurtosis);
  for (int bits = 2; bits <= 8; ++bits) {
    EXPECT_LT(optimal_alpha(c, bits, RangeMode::Symmetric).ql,
              optimal_alpha(w, bits, RangeMode::Symmetric).ql);
  }
}

}  // namespace
}  // namespace qshape
