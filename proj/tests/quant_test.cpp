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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "qshape/error.hpp"
#include "test_util.hpp"

namespace qshape {
namespace {

using testing::random_tensor;
using testing::ref_ql;
using testing::scan_min_ql;

float q(float w, double alpha, int bits, RangeMode mode = RangeMode::Symmetric) {
  return quantize_value(w, QuantSpec{bits, mode, alpha});
}

TEST(QuantSpecTest, StepAndLevels) {
  QuantSpec s{4, RangeMode::Symmetric, 1.0};
  EXPECT_EQ(s.max_level(), 7);
  EXPECT_DOUBLE_EQ(s.step(), 1.0 / 7.0);
  QuantSpec a{4, RangeMode::NonNegative, 1.5};
  EXPECT_EQ(a.max_level(), 15);
  EXPECT_DOUBLE_EQ(a.step(), 0.1);
  EXPECT_TRUE((QuantSpec{1, RangeMode::Symmetric, 1.0}).is_binary());
}

TEST(QuantSpecTest, RejectsInvalid) {
  EXPECT_THROW((QuantSpec{0, RangeMode::Symmetric, 1.0}).validate(), InvalidArgument);
  EXPECT_THROW((QuantSpec{17, RangeMode::Symmetric, 1.0}).validate(), InvalidArgument);
  EXPECT_THROW((QuantSpec{4, RangeMode::Symmetric, 0.0}).validate(), InvalidArgument);
  EXPECT_THROW((QuantSpec{4, RangeMode::Symmetric, -1.0}).validate(), InvalidArgument);
  EXPECT_THROW((QuantSpec{4, RangeMode::Symmetric, INFINITY}).validate(), InvalidArgument);
  EXPECT_THROW(quantize(Tensor({2}, 1.0f), QuantSpec{4, RangeMode::Symmetric, 0.0}),
               InvalidArgument);
}

TEST(QuantizeTest, ZeroIsALevel) { EXPECT_EQ(q(0.0f, 1.0, 4), 0.0f); }

TEST(QuantizeTest, ClampBoundaryMapsToTopLevel) {
  EXPECT_EQ(q(1.0f, 1.0, 4), 1.0f);
  EXPECT_EQ(q(-1.0f, 1.0, 4), -1.0f);
  EXPECT_EQ(q(3.0f, 1.0, 4), 1.0f);
  EXPECT_EQ(q(0.7f, 0.7, 2), 0.7f);
}

TEST(QuantizeTest, HandEvaluatedRounding) {
  EXPECT_NEAR(q(0.33f, 1.0, 4), 2.0 / 7.0, 1e-7);
  EXPECT_NEAR(q(-0.33f, 1.0, 4), -2.0 / 7.0, 1e-7);
}

TEST(QuantizeTest, TiesRoundAwayFromZero) {
  // alpha = 3, bits = 3: step 1, so 0.5 and 1.5 are ties.
  EXPECT_EQ(q(0.5f, 3.0, 3), 1.0f);
  EXPECT_EQ(q(-0.5f, 3.0, 3), -1.0f);
  EXPECT_EQ(q(1.5f, 3.0, 3), 2.0f);
  EXPECT_EQ(q(-1.5f, 3.0, 3), -2.0f);
}

TEST(QuantizeTest, BinaryGrid) {
  EXPECT_EQ(q(0.2f, 0.5, 1), 0.5f);
  EXPECT_EQ(q(-0.01f, 0.5, 1), -0.5f);
  EXPECT_EQ(q(0.0f, 0.5, 1), 0.5f);
  EXPECT_EQ(q(9.0f, 0.5, 1), 0.5f);
}

TEST(QuantizeTest, NonNegativeRange) {
  EXPECT_EQ(q(-2.0f, 1.5, 4, RangeMode::NonNegative), 0.0f);
  EXPECT_EQ(q(2.0f, 1.5, 4, RangeMode::NonNegative), 1.5f);
  EXPECT_NEAR(q(0.26f, 1.5, 4, RangeMode::NonNegative), 0.3, 1e-7);
}

TEST(QuantizeTest, RejectsNonFiniteNamingIndex) {
  Tensor t({4}, 0.5f);
  t[2] = std::numeric_limits<float>::quiet_NaN();
  try {
    quantize(t, QuantSpec{4, RangeMode::Symmetric, 1.0});
    FAIL() << "expected NonFiniteError";
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
  t[2] = INFINITY;
  EXPECT_THROW(quantize(t, QuantSpec{4, RangeMode::Symmetric, 1.0}), NonFiniteError);
}

TEST(QuantizeTest, PreservesShape) {
  const Tensor t = random_tensor({2, 3, 4}, 1);
  EXPECT_EQ(quantize(t, QuantSpec{3, RangeMode::Symmetric, 1.0}).shape(), t.shape());
}

TEST(QuantizePropertyTest, IdempotentBoundedAndErrorBounded) {
  for (int bits = 1; bits <= 8; ++bits) {
    for (auto mode : {RangeMode::Symmetric, RangeMode::NonNegative}) {
      for (double alpha : {0.1, 1.0, 3.7}) {
        const QuantSpec spec{bits, mode, alpha};
        const Tensor x = random_tensor({500}, 17 * bits + static_cast<int>(alpha * 10), 2.0);
        const Tensor y = quantize(x, spec);
        const Tensor yy = quantize(y, spec);
        ASSERT_TRUE(bit_equal(y, yy)) << "bits " << bits << " alpha " << alpha;
        for (std::size_t i = 0; i < x.numel(); ++i) {
          if (mode == RangeMode::Symmetric) {
            ASSERT_LE(std::fabs(y[i]), alpha * (1 + 1e-6));
          } else {
            ASSERT_GE(y[i], 0.0f);
            ASSERT_LE(y[i], alpha * (1 + 1e-6));
          }
          const bool in_range = mode == RangeMode::Symmetric
                                    ? std::fabs(x[i]) <= alpha
                                    : x[i] >= 0.0f && x[i] <= alpha;
          if (in_range && !spec.is_binary()) {
            ASSERT_LE(std::fabs(x[i] - y[i]), spec.step() / 2 * (1 + 1e-5) + 1e-7);
          }
        }
      }
    }
  }
}

TEST(QuantizedLossTest, ZeroOnExactLevels) {
  std::vector<float> levels;
  for (int i = -7; i <= 7; ++i) levels.push_back(static_cast<float>(i / 7.0));
  EXPECT_EQ(quantized_loss(levels, QuantSpec{4, RangeMode::Symmetric, 1.0}).ql, 0.0);
}

TEST(QuantizedLossTest, MatchesReferenceDefinition) {
  const Tensor x = random_tensor({300}, 3);
  for (int bits : {1, 2, 4, 8}) {
    const auto r = quantized_loss(x, QuantSpec{bits, RangeMode::Symmetric, 1.3});
    EXPECT_NEAR(r.ql, ref_ql(x.values(), 1.3, bits), 1e-6);
    EXPECT_EQ(r.bits, bits);
    EXPECT_EQ(r.norm_order, 1);
    EXPECT_DOUBLE_EQ(r.alpha_star, 1.3);
  }
}

TEST(QuantizedLossTest, ZeroNormRejected) {
  EXPECT_THROW(quantized_loss(Tensor({5}), QuantSpec{4, RangeMode::Symmetric, 1.0}),
               ZeroNormError);
  EXPECT_THROW(optimal_alpha(Tensor({5}), 4, RangeMode::Symmetric), ZeroNormError);
}

TEST(OptimalAlphaTest, ExactLevelSet) {
  std::vector<float> levels;
  for (int i = -7; i <= 7; ++i) levels.push_back(static_cast<float>(i / 7.0));
  for (auto method : {AlphaSearch::Auto, AlphaSearch::Exact, AlphaSearch::GridRefine}) {
    const auto r = optimal_alpha(levels, 4, RangeMode::Symmetric, method);
    EXPECT_NEAR(r.alpha_star, 1.0, 1e-6);
    EXPECT_NEAR(r.ql, 0.0, 1e-7);
  }
}

// Minima computed offline with an independent breakpoint enumeration.
TEST(OptimalAlphaTest, FrozenOracleValues) {
  const std::vector<float> w{0.9f,  -0.35f, 0.12f, -1.4f,   0.61f, 0.05f,  -0.77f, 0.28f,
                             1.1f,  -0.2f,  0.44f, -0.66f,  0.015f, -0.93f, 0.37f, 0.81f};
  const struct {
    int bits;
    double alpha;
    double ql;
  } expected[] = {{2, 0.8100000023841858, 0.3592448598531627},
                  {3, 1.100000023841858, 0.16416804156915046},
                  {4, 1.347499966621399, 0.07717934675963403}};
  for (const auto& e : expected) {
    const auto r = optimal_alpha(w, e.bits, RangeMode::Symmetric);
    EXPECT_NEAR(r.ql, e.ql, 1e-7) << "bits " << e.bits;
    EXPECT_NEAR(ref_ql(w, r.alpha_star, e.bits), e.ql, 1e-7) << "bits " << e.bits;
  }
}

TEST(OptimalAlphaTest, MatchesExhaustiveScanOnSixteenElements) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = random_tensor({16}, 100 + seed);
    const auto r = optimal_alpha(x, 2, RangeMode::Symmetric);
    EXPECT_LE(r.ql, scan_min_ql(x.values(), 2) + 1e-6) << "seed " << seed;
    EXPECT_NEAR(r.ql, ref_ql(x.values(), r.alpha_star, 2), 1e-6);
  }
}

TEST(OptimalAlphaTest, GridRefineMatchesExhaustiveScan) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = random_tensor({64}, 300 + seed);
    for (int bits : {2, 4}) {
      const auto r = optimal_alpha(x, bits, RangeMode::Symmetric, AlphaSearch::GridRefine);
      EXPECT_LE(r.ql, scan_min_ql(x.values(), bits) + 1e-6) << "seed " << seed;
    }
  }
}

TEST(OptimalAlphaTest, ExactAndGridRefineAgree) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = random_tensor({200}, 500 + seed);
    const auto exact = optimal_alpha(x, 3, RangeMode::Symmetric, AlphaSearch::Exact);
    const auto grid = optimal_alpha(x, 3, RangeMode::Symmetric, AlphaSearch::GridRefine);
    EXPECT_LE(exact.ql, grid.ql + 1e-7) << exact.ql - grid.ql;
    EXPECT_NEAR(exact.ql, grid.ql, 1e-4);
  }
}

TEST(OptimalAlphaTest, NoWorseThanMaxAbs) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor x = random_tensor({100}, 700 + seed);
    for (int bits = 1; bits <= 8; ++bits) {
      const auto r = optimal_alpha(x, bits, RangeMode::Symmetric);
      const auto at_max = quantized_loss(x, QuantSpec{bits, RangeMode::Symmetric, max_abs(x)});
      EXPECT_LE(r.ql, at_max.ql + 1e-12);
      EXPECT_GT(r.alpha_star, 0.0);
      const int m = QuantSpec{bits, RangeMode::Symmetric, 1.0}.max_level();
      EXPECT_LE(r.alpha_star, (bits == 1 ? 1 : 2 * m) * max_abs(x) * (1 + 1e-9));
    }
  }
}

TEST(OptimalAlphaTest, MinimizerCanExceedPeak) {
  // 1 and 0.5 are levels 2 and 1 of the 3-bit grid at alpha 1.5; no alpha <= 1
  // represents both.
  const std::vector<float> w{1.0f, 0.5f, -0.5f};
  const auto r = optimal_alpha(w, 3, RangeMode::Symmetric);
  EXPECT_NEAR(r.alpha_star, 1.5, 1e-9);
  EXPECT_EQ(r.ql, 0.0);
  EXPECT_GT(scan_min_ql(w, 3), 0.05);
  EXPECT_EQ(optimal_alpha(w, 3, RangeMode::Symmetric, AlphaSearch::GridRefine).ql, 0.0);
}

TEST(OptimalAlphaTest, ExactBeatsScanPastPeak) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = random_tensor({12}, 900 + seed);
    for (int bits : {2, 3, 4}) {
      const int m = QuantSpec{bits, RangeMode::Symmetric, 1.0}.max_level();
      const auto r = optimal_alpha(x, bits, RangeMode::Symmetric, AlphaSearch::Exact);
      EXPECT_LE(r.ql, scan_min_ql(x.values(), bits, 40000, 2.0 * m) + 1e-9)
          << "seed " << seed << " bits " << bits;
    }
  }
}

TEST(OptimalAlphaTest, NonNegativeMode) {
  const Tensor x = testing::uniform_tensor({400}, 9, 0.0, 2.0);
  const auto r = optimal_alpha(x, 4, RangeMode::NonNegative);
  EXPECT_GT(r.alpha_star, 1.5);
  EXPECT_LE(r.alpha_star, 2.0);
  const auto direct = quantized_loss(x, QuantSpec{4, RangeMode::NonNegative, r.alpha_star});
  EXPECT_NEAR(direct.ql, r.ql, 1e-9);
}

TEST(OptimalAlphaTest, QlDecreasesWithBits) {
  for (auto kind : {Distribution::Laplace, Distribution::Gaussian, Distribution::Uniform}) {
    const Tensor x = sample_distribution(kind, 1.0, 1000, 5);
    double prev = INFINITY;
    for (int bits = 2; bits <= 8; ++bits) {
      const double ql = optimal_alpha(x, bits, RangeMode::Symmetric).ql;
      EXPECT_LT(ql, prev) << to_string(kind) << " bits " << bits;
      prev = ql;
    }
  }
}

TEST(OptimalAlphaTest, ScaleEquivariant) {
  const Tensor x = random_tensor({128}, 11);
  Tensor y = x;
  for (auto& v : y.values()) v *= 8.0f;
  const auto rx = optimal_alpha(x, 3, RangeMode::Symmetric);
  const auto ry = optimal_alpha(y, 3, RangeMode::Symmetric);
  EXPECT_NEAR(ry.alpha_star, 8.0 * rx.alpha_star, 1e-5 * ry.alpha_star);
  EXPECT_NEAR(ry.ql, rx.ql, 1e-9);
}

TEST(SampleDistributionTest, DeterministicAndSupported) {
  const Tensor a = sample_distribution(Distribution::Uniform, 2.5, 1000, 42);
  const Tensor b = sample_distribution(Distribution::Uniform, 2.5, 1000, 42);
  EXPECT_TRUE(bit_equal(a, b));
  for (float v : a.values()) {
    EXPECT_GE(v, -2.5f);
    EXPECT_LE(v, 2.5f);
  }
  const Tensor c = sample_distribution(Distribution::Uniform, 2.5, 1000, 43);
  EXPECT_FALSE(bit_equal(a, c));
}

TEST(SampleDistributionTest, AnalyticMeanAbs) {
  const std::size_t n = 1000000;
  EXPECT_NEAR(mean_abs(sample_distribution(Distribution::Gaussian, 1.5, n, 1)),
              1.5 * std::sqrt(2.0 / std::numbers::pi), 0.01 * 1.5 * std::sqrt(2.0 / std::numbers::pi));
  EXPECT_NEAR(mean_abs(sample_distribution(Distribution::Laplace, 0.7, n, 2)), 0.7, 0.007);
  EXPECT_NEAR(mean_abs(sample_distribution(Distribution::Uniform, 3.0, n, 3)), 1.5, 0.015);
  for (auto kind : {Distribution::Laplace, Distribution::Gaussian, Distribution::Uniform}) {
    EXPECT_NEAR(analytic_mean_abs(kind, scale_for_mean_abs(kind, 2.0)), 2.0, 1e-12);
  }
}

TEST(SampleDistributionTest, RejectsBadArguments) {
  EXPECT_THROW(sample_distribution(Distribution::Gaussian, 0.0, 10, 1), InvalidArgument);
  EXPECT_THROW(sample_distribution(Distribution::Gaussian, 1.0, 0, 1), InvalidArgument);
}

TEST(ShapeOrderingTest, UniformBeatsGaussianBeatsLaplace) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    double ql[3];
    double alpha[3];
    int i = 0;
    for (auto kind : {Distribution::Uniform, Distribution::Gaussian, Distribution::Laplace}) {
      const Tensor x = sample_distribution(kind, scale_for_mean_abs(kind, 1.0), 1000, seed * 7 + i);
      const auto r = optimal_alpha(x, 4, RangeMode::Symmetric);
      ql[i] = r.ql;
      alpha[i] = r.alpha_star;
      ++i;
    }
    EXPECT_LT(ql[0], ql[1]) << "seed " << seed;
    EXPECT_LT(ql[1], ql[2]) << "seed " << seed;
    // Matched E|x| puts the heavy-tailed Laplace clip furthest out.
    EXPECT_LT(alpha[0], alpha[1]) << "seed " << seed;
    EXPECT_LT(alpha[1], alpha[2]) << "seed " << seed;
  }
}

TEST(ShapeOrderingTest, AlphaOrderingUnderMatchedPeak) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    double alpha[3];
    int i = 0;
    for (auto kind : {Distribution::Laplace, Distribution::Gaussian, Distribution::Uniform}) {
      Tensor x = sample_distribution(kind, 1.0, 10000, seed * 11 + i);
      const float peak = max_abs(x);
      for (auto& v : x.values()) v = v / peak * 10.0f;
      alpha[i++] = optimal_alpha(x, 4, RangeMode::Symmetric).alpha_star;
    }
    EXPECT_LT(alpha[0], alpha[1]) << "seed " << seed;
    EXPECT_LT(alpha[1], alpha[2]) << "seed " << seed;
  }
}

}  // namespace
}  // namespace qshape
