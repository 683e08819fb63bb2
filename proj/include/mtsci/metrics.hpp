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

#ifndef MTSCI_METRICS_HPP_
#define MTSCI_METRICS_HPP_

#include <cmath>
#include <optional>
#include <vector>

#include "mtsci/common.hpp"
#include "mtsci/dataset.hpp"
#include "mtsci/sampler.hpp"

namespace mtsci {

struct PointScores {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mape;  // percent; empty when every truth is below the floor
  long n_cells = 0;
  long mape_excluded = 0;
};

struct ScoreReport {
  double mae = 0.0;
  double rmse = 0.0;
  std::optional<double> mape;
  std::optional<double> crps;
  long n_cells = 0;
  long mape_excluded = 0;
};

/// Running sums for point scores; windows can be accumulated independently
/// and merged.
struct PointAccumulator {
  double abs_sum = 0.0, sq_sum = 0.0, ape_sum = 0.0;
  long n = 0, n_ape = 0, excluded = 0;
  double mape_floor = 1e-4;

  void add(double truth, double estimate) {
    const double e = estimate - truth;
    abs_sum += std::abs(e);
    sq_sum += e * e;
    ++n;
    if (std::abs(truth) > mape_floor) {
      ape_sum += std::abs(e) / std::abs(truth);
      ++n_ape;
    } else {
      ++excluded;
    }
  }

  void merge(const PointAccumulator& o) {
    abs_sum += o.abs_sum;
    sq_sum += o.sq_sum;
    ape_sum += o.ape_sum;
    n += o.n;
    n_ape += o.n_ape;
    excluded += o.excluded;
  }

  PointScores finish() const {
    if (n == 0) throw ValidationError("point scores over an empty target set");
    PointScores s;
    s.mae = abs_sum / static_cast<double>(n);
    s.rmse = std::sqrt(sq_sum / static_cast<double>(n));
    if (n_ape > 0) s.mape = 100.0 * ape_sum / static_cast<double>(n_ape);
    s.n_cells = n;
    s.mape_excluded = excluded;
    return s;
  }
};

inline PointScores point_scores(const Matrix& truth, const Matrix& estimate, const Mask& target,
                                double mape_floor = 1e-4) {
  if (truth.rows() != estimate.rows() || truth.cols() != estimate.cols() ||
      target.rows() != truth.rows() || target.cols() != truth.cols())
    throw ValidationError("point_scores: shape mismatch");
  PointAccumulator acc;
  acc.mape_floor = mape_floor;
  for (Eigen::Index j = 0; j < truth.cols(); ++j)
    for (Eigen::Index i = 0; i < truth.rows(); ++i)
      if (target(i, j)) acc.add(truth(i, j), estimate(i, j));
  return acc.finish();
}

inline std::vector<double> default_quantile_levels() {
  std::vector<double> q;
  for (int i = 1; i <= 19; ++i) q.push_back(0.05 * i);
  return q;
}

/// Unnormalized quantile-loss sums for CRPS: sum over cells and levels of the
/// pinball term, and sum of |truth| over cells.
struct CrpsAccumulator {
  double loss_sum = 0.0;
  double abs_truth_sum = 0.0;
  long cells = 0;
  std::size_t levels = 0;

  /// `quantiles[i]` is the estimate at level `levels[i]` for this cell.
  void add(double truth, const std::vector<double>& quantiles, const std::vector<double>& q_levels) {
    for (std::size_t i = 0; i < q_levels.size(); ++i) {
      const double xq = quantiles[i];
      const double ind = truth < xq ? 1.0 : 0.0;
      loss_sum += 2.0 * (ind - q_levels[i]) * (xq - truth);
    }
    abs_truth_sum += std::abs(truth);
    levels = q_levels.size();
    ++cells;
  }

  void merge(const CrpsAccumulator& o) {
    loss_sum += o.loss_sum;
    abs_truth_sum += o.abs_truth_sum;
    cells += o.cells;
    if (o.levels) levels = o.levels;
  }

  double finish() const {
    if (cells == 0 || levels == 0) throw ValidationError("CRPS over an empty target set");
    if (abs_truth_sum <= 0.0) throw ValidationError("CRPS normalization: all truths are zero");
    return loss_sum / (static_cast<double>(levels) * abs_truth_sum);
  }
};

/// Quantile-loss CRPS over target cells normalized by mean |truth|.
/// `samples` are S matrices of the same shape as `truth`.
inline double crps_quantile(const Matrix& truth, const std::vector<Matrix>& samples,
                            const Mask& target,
                            const std::vector<double>& levels = default_quantile_levels()) {
  if (samples.size() < 2) throw ValidationError("crps_quantile needs at least 2 samples");
  CrpsAccumulator acc;
  std::vector<double> buf(samples.size()), qs(levels.size());
  for (Eigen::Index j = 0; j < truth.cols(); ++j)
    for (Eigen::Index i = 0; i < truth.rows(); ++i) {
      if (!target(i, j)) continue;
      for (std::size_t s = 0; s < samples.size(); ++s) buf[s] = samples[s](i, j);
      for (std::size_t q = 0; q < levels.size(); ++q) qs[q] = empirical_quantile(buf, levels[q]);
      acc.add(truth(i, j), qs, levels);
    }
  return acc.finish();
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Fills every non-conditioning cell with the per-feature training mean.
inline Matrix mean_baseline(const ImputationQuery& q, const Vector& feature_means) {
  Matrix out = q.observed_raw;
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      if (!q.cond(i, j)) out(i, j) = feature_means(j);
  return out;
}

/// Per-feature linear interpolation over time within the window; cells
/// before the first or after the last observation take the nearest one.
/// Features with no observation in the window use `fallback_means`.
inline Matrix linear_interp_baseline(const ImputationQuery& q, const Vector& fallback_means) {
  Matrix out = q.observed_raw;
  const Eigen::Index L = out.rows();
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    std::vector<Eigen::Index> known;
    for (Eigen::Index i = 0; i < L; ++i)
      if (q.cond(i, j)) known.push_back(i);
    for (Eigen::Index i = 0; i < L; ++i) {
      if (q.cond(i, j)) continue;
      if (known.empty()) {
        out(i, j) = fallback_means(j);
        continue;
      }
      const auto after = std::lower_bound(known.begin(), known.end(), i);
      if (after == known.begin()) {
        out(i, j) = q.observed_raw(known.front(), j);
      } else if (after == known.end()) {
        out(i, j) = q.observed_raw(known.back(), j);
      } else {
        const Eigen::Index hi = *after, lo = *(after - 1);
        const double t = static_cast<double>(i - lo) / static_cast<double>(hi - lo);
        out(i, j) = (1.0 - t) * q.observed_raw(lo, j) + t * q.observed_raw(hi, j);
      }
    }
  }
  return out;
}

}  // namespace mtsci

#endif  // MTSCI_METRICS_HPP_
