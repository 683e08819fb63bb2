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

#ifndef MTSCI_DIFFUSION_HPP_
#define MTSCI_DIFFUSION_HPP_

#include <cmath>
#include <string>
#include <vector>

#include "mtsci/common.hpp"

namespace mtsci {

enum class ScheduleShape { kLinear, kQuadratic };

inline ScheduleShape parse_schedule_shape(const std::string& s) {
  if (s == "linear") return ScheduleShape::kLinear;
  if (s == "quadratic") return ScheduleShape::kQuadratic;
  throw ConfigError("diffusion.shape must be linear or quadratic, got '" + s + "'");
}

inline std::string to_string(ScheduleShape s) {
  return s == ScheduleShape::kLinear ? "linear" : "quadratic";
}

/// Noise schedule with precomputed products. Steps are 1-based in the public
/// accessors; k ranges over [1, K].
class DiffusionSchedule {
 public:
  static DiffusionSchedule build(int steps, double beta_1, double beta_K,
                                 ScheduleShape shape = ScheduleShape::kQuadratic) {
    if (steps < 1) throw ConfigError("diffusion.K must be >= 1");
    if (!(beta_1 > 0.0 && beta_1 <= beta_K && beta_K < 1.0))
      throw ConfigError("diffusion betas must satisfy 0 < beta_1 <= beta_K < 1");
    std::vector<double> beta(steps);
    for (int i = 0; i < steps; ++i) {
      const double t = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
      if (shape == ScheduleShape::kLinear) {
        beta[i] = beta_1 + t * (beta_K - beta_1);
      } else {
        const double r = std::sqrt(beta_1) + t * (std::sqrt(beta_K) - std::sqrt(beta_1));
        beta[i] = r * r;
      }
    }
    DiffusionSchedule s = from_betas(std::move(beta));
    s.shape_ = shape;
    return s;
  }

  /// Arbitrary per-step betas, each in (0, 1).
  static DiffusionSchedule from_betas(std::vector<double> beta) {
    if (beta.empty()) throw ConfigError("diffusion schedule needs at least one step");
    DiffusionSchedule s;
    const auto n = beta.size();
    s.beta_ = std::move(beta);
    s.alpha_.resize(n);
    s.alpha_bar_.resize(n);
    s.sigma_.resize(n);
    double prod = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(s.beta_[i] > 0.0 && s.beta_[i] < 1.0))
        throw ConfigError("diffusion beta values must lie in (0, 1)");
      s.alpha_[i] = 1.0 - s.beta_[i];
      prod *= s.alpha_[i];
      s.alpha_bar_[i] = prod;
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double prev = i == 0 ? 1.0 : s.alpha_bar_[i - 1];
      // sigma_1 is zero here and never used: the last reverse step adds no noise.
      s.sigma_[i] = std::sqrt(s.beta_[i] * (1.0 - prev) / (1.0 - s.alpha_bar_[i]));
    }
    return s;
  }

  int steps() const { return static_cast<int>(beta_.size()); }
  ScheduleShape shape() const { return shape_; }

  double beta(int k) const { return beta_[index(k)]; }
  double alpha(int k) const { return alpha_[index(k)]; }
  double alpha_bar(int k) const { return alpha_bar_[index(k)]; }
  /// ᾱ_{k-1} with ᾱ_0 = 1.
  double alpha_bar_prev(int k) const { return k == 1 ? 1.0 : alpha_bar(k - 1); }
  double sigma(int k) const { return sigma_[index(k)]; }

  const std::vector<double>& betas() const { return beta_; }

 private:
  std::size_t index(int k) const {
    if (k < 1 || k > steps())
      throw std::out_of_range("diffusion step " + std::to_string(k) + " outside [1, " +
                              std::to_string(steps()) + "]");
    return static_cast<std::size_t>(k - 1);
  }

  std::vector<double> beta_, alpha_, alpha_bar_, sigma_;
  ScheduleShape shape_ = ScheduleShape::kLinear;
};

/// Closed-form forward noising of the target values at step k.
struct NoisedTarget {
  Matrix x_k;
  int k = 0;
  Matrix eps;
};

inline NoisedTarget noise_targets(const Matrix& x0, int k, const Matrix& eps,
                                  const DiffusionSchedule& schedule) {
  if (eps.rows() != x0.rows() || eps.cols() != x0.cols())
    throw ValidationError("noise_targets: eps shape differs from x0");
  const double ab = schedule.alpha_bar(k);
  return {std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps, k, eps};
}

/// One ancestral step from a noise prediction. fresh_eps must be zero at k = 1.
template <typename Derived>
Matrix reverse_step(const Eigen::MatrixBase<Derived>& x_k, const Matrix& predicted_eps, int k,
                    const DiffusionSchedule& schedule, const Matrix& fresh_eps) {
  const double a = schedule.alpha(k);
  const double ab = schedule.alpha_bar(k);
  Matrix mean = (x_k - (1.0 - a) / std::sqrt(1.0 - ab) * predicted_eps) / std::sqrt(a);
  if (k > 1) mean += schedule.sigma(k) * fresh_eps;
  return mean;
}

/// One ancestral step from a prediction of x0 (posterior mean form).
template <typename Derived>
Matrix reverse_step_x0(const Eigen::MatrixBase<Derived>& x_k, const Matrix& predicted_x0, int k,
                       const DiffusionSchedule& schedule, const Matrix& fresh_eps) {
  const double a = schedule.alpha(k);
  const double ab = schedule.alpha_bar(k);
  const double ab_prev = schedule.alpha_bar_prev(k);
  const double b = schedule.beta(k);
  Matrix mean = (std::sqrt(a) * (1.0 - ab_prev) / (1.0 - ab)) * x_k +
                (std::sqrt(ab_prev) * b / (1.0 - ab)) * predicted_x0;
  if (k > 1) mean += schedule.sigma(k) * fresh_eps;
  return mean;
}

}  // namespace mtsci

#endif  // MTSCI_DIFFUSION_HPP_
