// Copyright 2026 The MTSCI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <cmath>
#include <stdexcept>

#include <gtest/gtest.h>

#include "mtsci/common.hpp"
#include "mtsci/diffusion.hpp"

namespace mtsci {
namespace {

TEST(ScheduleTest, TwoEqualBetasGiveProducts) {
  const auto s = DiffusionSchedule::from_betas({0.5, 0.5});
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.5);
  EXPECT_DOUBLE_EQ(s.alpha_bar(2), 0.25);
}

TEST(ScheduleTest, SingleStep) {
  const auto s = DiffusionSchedule::build(1, 0.3, 0.3, ScheduleShape::kLinear);
  EXPECT_EQ(s.steps(), 1);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.7);
}

TEST(ScheduleTest, LinearThreeSteps) {
  const auto s = DiffusionSchedule::build(3, 0.1, 0.3, ScheduleShape::kLinear);
  EXPECT_NEAR(s.beta(1), 0.1, 1e-15);
  EXPECT_NEAR(s.beta(2), 0.2, 1e-15);
  EXPECT_NEAR(s.beta(3), 0.3, 1e-15);
  EXPECT_NEAR(s.alpha_bar(1), 0.9, 1e-15);
  EXPECT_NEAR(s.alpha_bar(2), 0.72, 1e-15);
  EXPECT_NEAR(s.alpha_bar(3), 0.504, 1e-15);
}

TEST(ScheduleTest, QuadraticInterpolatesSquareRoots) {
  const int K = 50;
  const double b1 = 1e-4, bK = 0.2;
  const auto s = DiffusionSchedule::build(K, b1, bK, ScheduleShape::kQuadratic);
  double prod = 1.0;
  for (int k = 1; k <= K; ++k) {
    const double r = std::sqrt(b1) + (k - 1.0) / (K - 1.0) * (std::sqrt(bK) - std::sqrt(b1));
    EXPECT_NEAR(s.beta(k), r * r, 1e-15);
    prod *= 1.0 - r * r;
    EXPECT_NEAR(s.alpha_bar(k), prod, 1e-14);
    EXPECT_NEAR(s.alpha(k), 1.0 - r * r, 1e-15);
  }
  EXPECT_NEAR(s.beta(1), b1, 1e-18);
  EXPECT_NEAR(s.beta(K), bK, 1e-15);
}

TEST(ScheduleTest, PosteriorSigma) {
  const auto s = DiffusionSchedule::build(10, 0.01, 0.3, ScheduleShape::kLinear);
  for (int k = 2; k <= 10; ++k) {
    const double var = s.beta(k) * (1.0 - s.alpha_bar(k - 1)) / (1.0 - s.alpha_bar(k));
    EXPECT_NEAR(s.sigma(k) * s.sigma(k), var, 1e-15);
  }
}

TEST(ScheduleTest, AlphaBarStrictlyDecreasingInUnitInterval) {
  for (auto shape : {ScheduleShape::kLinear, ScheduleShape::kQuadratic}) {
    const auto s = DiffusionSchedule::build(50, 1e-4, 0.5, shape);
    for (int k = 1; k <= 50; ++k) {
      EXPECT_GT(s.beta(k), 0.0);
      EXPECT_LT(s.beta(k), 1.0);
      if (k > 1) EXPECT_LT(s.alpha_bar(k), s.alpha_bar(k - 1));
    }
    EXPECT_GT(s.alpha_bar(50), 0.0);
    EXPECT_LT(s.alpha_bar(50), 1.0);
  }
}

TEST(ScheduleTest, RejectsBadParameters) {
  EXPECT_THROW(DiffusionSchedule::build(0, 0.1, 0.2), ConfigError);
  EXPECT_THROW(DiffusionSchedule::build(5, 0.0, 0.2), ConfigError);
  EXPECT_THROW(DiffusionSchedule::build(5, 0.3, 0.2), ConfigError);
  EXPECT_THROW(DiffusionSchedule::build(5, 0.1, 1.0), ConfigError);
  EXPECT_THROW(parse_schedule_shape("cosine"), ConfigError);
}

TEST(ScheduleTest, StepOutOfRange) {
  const auto s = DiffusionSchedule::build(3, 0.1, 0.3, ScheduleShape::kLinear);
  EXPECT_THROW(s.beta(0), std::out_of_range);
  EXPECT_THROW(s.alpha_bar(4), std::out_of_range);
  const Matrix x = Matrix::Ones(2, 2);
  EXPECT_THROW(noise_targets(x, 4, x, s), std::out_of_range);
  EXPECT_THROW(reverse_step(x, x, 0, s, x), std::out_of_range);
}

TEST(NoiseTargetsTest, ZeroNoiseScalesByRootAlphaBar) {
  const auto s = DiffusionSchedule::build(5, 0.1, 0.3, ScheduleShape::kLinear);
  Matrix x0(2, 3);
  x0 << 1, -2, 3, 0.5, 0, -1;
  const auto out = noise_targets(x0, 4, Matrix::Zero(2, 3), s);
  EXPECT_TRUE(out.x_k.isApprox(std::sqrt(s.alpha_bar(4)) * x0, 1e-15));
  EXPECT_EQ(out.k, 4);
}

TEST(NoiseTargetsTest, TinyBetaIsIdentity) {
  const auto s = DiffusionSchedule::from_betas({1e-16});
  const Matrix x0 = Matrix::Constant(3, 2, 1.7);
  const auto out = noise_targets(x0, 1, Matrix::Constant(3, 2, 0.3), s);
  EXPECT_LT((out.x_k - x0).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(NoiseTargetsTest, HandValue) {
  const auto s = DiffusionSchedule::from_betas({0.5, 0.5});  // alpha_bar_2 = 0.25
  const auto out = noise_targets(Matrix::Ones(1, 1), 2, Matrix::Ones(1, 1), s);
  EXPECT_NEAR(out.x_k(0, 0), 1.366025, 1e-6);
}

TEST(ReverseStepTest, SingleStepRoundTripIsExact) {
  Rng rng(3);
  const auto s = DiffusionSchedule::build(1, 0.2, 0.2);
  const Matrix x0 = gaussian_matrix(rng, 4, 3);
  const Matrix eps = gaussian_matrix(rng, 4, 3);
  const auto noised = noise_targets(x0, 1, eps, s);
  const Matrix back = reverse_step(noised.x_k, eps, 1, s, gaussian_matrix(rng, 4, 3));
  EXPECT_LT((back - x0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ReverseStepTest, ZeroInputsLeaveOnlyInjectedNoise) {
  const auto s = DiffusionSchedule::build(4, 0.1, 0.4, ScheduleShape::kLinear);
  const Matrix fresh = Matrix::Constant(2, 2, 0.7);
  const Matrix out = reverse_step(Matrix::Zero(2, 2), Matrix::Zero(2, 2), 3, s, fresh);
  EXPECT_TRUE(out.isApprox(s.sigma(3) * fresh, 1e-15));
  // No noise is injected at the final step.
  EXPECT_TRUE(reverse_step(Matrix::Zero(2, 2), Matrix::Zero(2, 2), 1, s, fresh).isZero(0.0));
}

TEST(ReverseStepTest, HandValue) {
  // alpha_2 = 0.75 and alpha_bar_2 = 0.96 * 0.75 = 0.72.
  const auto s = DiffusionSchedule::from_betas({0.04, 0.25});
  const Matrix out = reverse_step(Matrix::Ones(1, 1), Matrix::Ones(1, 1), 2, s, Matrix::Zero(1, 1));
  EXPECT_NEAR(out(0, 0), 0.609156, 1e-6);
}

TEST(ReverseStepTest, X0FormMatchesPosteriorMean) {
  const auto s = DiffusionSchedule::build(6, 0.05, 0.3, ScheduleShape::kLinear);
  Rng rng(11);
  const Matrix x_k = gaussian_matrix(rng, 3, 2), x0_hat = gaussian_matrix(rng, 3, 2);
  const int k = 4;
  const double ab = s.alpha_bar(k), abp = s.alpha_bar(k - 1), a = s.alpha(k), b = s.beta(k);
  const Matrix expected = (std::sqrt(a) * (1 - abp) / (1 - ab)) * x_k + (std::sqrt(abp) * b / (1 - ab)) * x0_hat;
  const Matrix got = reverse_step_x0(x_k, x0_hat, k, s, Matrix::Zero(3, 2));
  EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-14);
  // The two forms agree when eps is the noise implied by x0_hat.
  const Matrix eps = (x_k - std::sqrt(ab) * x0_hat) / std::sqrt(1 - ab);
  EXPECT_LT((reverse_step(x_k, eps, k, s, Matrix::Zero(3, 2)) - got).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ReverseStepTest, X0FormSingleStepRecoversTarget) {
  const auto s = DiffusionSchedule::build(1, 0.3, 0.3);
  Rng rng(5);
  const Matrix x0 = gaussian_matrix(rng, 2, 2);
  const Matrix out = reverse_step_x0(gaussian_matrix(rng, 2, 2), x0, 1, s, gaussian_matrix(rng, 2, 2));
  EXPECT_LT((out - x0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(NoiseTargetsTest, ClosedFormMatchesIteratedMoments) {
  const auto s = DiffusionSchedule::build(20, 1e-3, 0.3, ScheduleShape::kQuadratic);
  const double x0 = 1.3;
  const int n = 20000;
  Rng rng(17);
  double sum_it = 0, sq_it = 0, sum_cf = 0, sq_cf = 0;
  for (int i = 0; i < n; ++i) {
    double x = x0;
    for (int k = 1; k <= s.steps(); ++k) x = std::sqrt(s.alpha(k)) * x + std::sqrt(s.beta(k)) * gaussian(rng);
    sum_it += x;
    sq_it += x * x;
    const double y = noise_targets(Matrix::Constant(1, 1, x0), s.steps(), Matrix::Constant(1, 1, gaussian(rng)), s).x_k(0, 0);
    sum_cf += y;
    sq_cf += y * y;
  }
  const double m_it = sum_it / n, m_cf = sum_cf / n;
  const double v_it = sq_it / n - m_it * m_it, v_cf = sq_cf / n - m_cf * m_cf;
  const double se_mean = std::sqrt(v_it / n + v_cf / n);
  EXPECT_LT(std::abs(m_it - m_cf), 3 * se_mean);
  // Var of a sample variance for Gaussians is 2 sigma^4 / (n - 1).
  const double se_var = std::sqrt(2 * v_it * v_it / (n - 1) + 2 * v_cf * v_cf / (n - 1));
  EXPECT_LT(std::abs(v_it - v_cf), 3 * se_var);
  EXPECT_NEAR(m_cf, std::sqrt(s.alpha_bar(s.steps())) * x0, 4 * std::sqrt(v_cf / n));
}

}  // namespace
}  // namespace mtsci
