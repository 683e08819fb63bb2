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

#ifndef MTSCI_SAMPLER_HPP_
#define MTSCI_SAMPLER_HPP_

#include <algorithm>
#include <cmath>
#include <exception>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "mtsci/autograd.hpp"
#include "mtsci/common.hpp"
#include "mtsci/dataset.hpp"
#include "mtsci/denoiser.hpp"
#include "mtsci/diffusion.hpp"
#include "mtsci/training.hpp"

namespace mtsci {

/// What inference is allowed to see of a window: its conditioning cells only.
/// Neither the context window nor held-out ground truth is reachable from here.
struct ImputationQuery {
  Matrix observed;      // normalized units, zero off `cond`
  Matrix observed_raw;  // physical units, zero off `cond`
  Mask cond;
  long start_index = 0;

  /// Cells to impute: everything that is not conditioning.
  Mask targets() const { return !cond; }
  long length() const { return static_cast<long>(cond.rows()); }
  int num_features() const { return static_cast<int>(cond.cols()); }
};

/// Builds a query from a window in physical units.
inline ImputationQuery make_query(const Window& raw, const NormStats& stats) {
  ImputationQuery q;
  q.cond = raw.cond_mask();
  const Matrix keep = to_real(q.cond);
  q.observed_raw = raw.values.cwiseProduct(keep);
  q.observed = stats.apply(raw.values).cwiseProduct(keep);
  q.start_index = raw.start_index;
  return q;
}

struct ImputationResult {
  std::vector<Matrix> samples;  // physical units, L x C each
  Matrix point_estimate;        // per-cell median over samples
  Mask target_mask;
  long start_index = 0;

  /// Empirical quantile per cell (linear interpolation between order stats).
  Matrix quantile(double q) const;
};

/// Linear-interpolated empirical quantile of `values` (sorted in place).
inline double empirical_quantile(std::vector<double>& values, double q) {
  if (values.empty()) throw ValidationError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

inline Matrix ImputationResult::quantile(double q) const {
  if (samples.empty()) throw ValidationError("quantile of an empty sample set");
  Matrix out(samples.front().rows(), samples.front().cols());
  std::vector<double> buf(samples.size());
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) {
      for (std::size_t s = 0; s < samples.size(); ++s) buf[s] = samples[s](i, j);
      out(i, j) = empirical_quantile(buf, q);
    }
  return out;
}

/// Predicts the network output for S stacked candidates of one window: `x`
/// is (S*L) x C with candidate s in rows [s*L, (s+1)*L), zero off-target.
using BatchPredictor = std::function<Matrix(const Matrix& x, int k)>;

/// Wraps a trained Denoiser as a BatchPredictor for one query. The condition
/// (mix matrix at ones, no context) is encoded once.
template <typename Scalar>
BatchPredictor make_predictor(const Denoiser<Scalar>& model, const ImputationQuery& query,
                              int num_candidates) {
  const int L = model.config().window, C = model.config().features;
  if (query.length() != L || query.num_features() != C)
    throw CheckpointMismatch("window shape (" + std::to_string(query.length()) + ", " +
                             std::to_string(query.num_features()) + ") does not match model (" +
                             std::to_string(L) + ", " + std::to_string(C) + ")");
  DenoiserBatch<Scalar> batch(L, C);
  const Matrix zeros = Matrix::Zero(L, C);
  for (int s = 0; s < num_candidates; ++s)
    batch.add(zeros, 1, query.observed, query.cond, nullptr, nullptr, nullptr);
  auto enc = std::make_shared<typename Denoiser<Scalar>::EncodedCondition>();
  {
    ag::Graph<Scalar> g(false);
    *enc = model.encode_condition(g, batch.cond);
  }
  return [&model, enc, L, C, num_candidates](const Matrix& x, int k) {
    ag::Tensor<Scalar> cells(Eigen::Index(num_candidates) * L * C, 1);
    for (int s = 0; s < num_candidates; ++s)
      for (int l = 0; l < L; ++l)
        for (int c = 0; c < C; ++c)
          cells((Eigen::Index(s) * L + l) * C + c, 0) = static_cast<Scalar>(x(s * L + l, c));
    ag::Graph<Scalar> g(false);
    auto out = model.forward(g, cells, std::vector<int>(static_cast<std::size_t>(num_candidates), k), *enc);
    Matrix pred(Eigen::Index(num_candidates) * L, C);
    for (int s = 0; s < num_candidates; ++s)
      pred.middleRows(Eigen::Index(s) * L, L) =
          cells_to_matrix<Scalar>(out.eps->value, Eigen::Index(s) * L * C, L, C);
    return pred;
  };
}

/// Reverse diffusion over the target cells of S candidates, returning them
/// in normalized units ((S*L) x C, zero off-target).
inline Matrix sample_targets(const BatchPredictor& predict, const DiffusionSchedule& schedule,
                             const Mask& target, int num_samples, Rng& rng,
                             Objective objective = Objective::kPredictNoise) {
  const auto L = target.rows(), C = target.cols();
  const Matrix tmask = to_real(target).replicate(num_samples, 1);
  Matrix x = gaussian_matrix(rng, L * num_samples, C).cwiseProduct(tmask);
  for (int k = schedule.steps(); k >= 1; --k) {
    const Matrix fresh = k > 1 ? gaussian_matrix(rng, L * num_samples, C)
                               : Matrix::Zero(L * num_samples, C);
    const Matrix pred = predict(x, k);
    x = objective == Objective::kPredictNoise ? reverse_step(x, pred, k, schedule, fresh)
                                              : reverse_step_x0(x, pred, k, schedule, fresh);
    x = x.cwiseProduct(tmask);
  }
  return x;
}

/// Generates S imputations of one window and assembles them in physical
/// units with observed cells copied through unchanged.
inline ImputationResult impute_window(const ImputationQuery& query, const BatchPredictor& predict,
                                      const DiffusionSchedule& schedule, const NormStats& stats,
                                      int num_samples, std::uint64_t seed,
                                      Objective objective = Objective::kPredictNoise) {
  if (num_samples < 1) throw ConfigError("infer.samples must be >= 1");
  const long L = query.length();
  const int C = query.num_features();
  ImputationResult res;
  res.target_mask = query.targets();
  res.start_index = query.start_index;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(query.start_index)));
  Matrix drawn = Matrix::Zero(L * num_samples, C);
  if (res.target_mask.any()) drawn = sample_targets(predict, schedule, res.target_mask, num_samples, rng, objective);
  for (int s = 0; s < num_samples; ++s) {
    const Matrix block = drawn.middleRows(Eigen::Index(s) * L, L);
    if (!block.allFinite()) {
      warn("window " + std::to_string(query.start_index) + ": sample " + std::to_string(s) +
           " produced non-finite values and was dropped");
      continue;
    }
    Matrix out = query.observed_raw;
    const Matrix phys = stats.invert(block);
    for (Eigen::Index j = 0; j < C; ++j)
      for (Eigen::Index i = 0; i < L; ++i)
        if (res.target_mask(i, j)) out(i, j) = phys(i, j);
    res.samples.push_back(std::move(out));
  }
  if (res.samples.empty())
    throw DivergenceError("window " + std::to_string(query.start_index) +
                          ": every sample diverged during reverse diffusion");
  res.point_estimate = res.quantile(0.5);
  // Median of identical copies is exact, but keep the observed cells literal.
  for (Eigen::Index j = 0; j < C; ++j)
    for (Eigen::Index i = 0; i < L; ++i)
      if (!res.target_mask(i, j)) res.point_estimate(i, j) = query.observed_raw(i, j);
  return res;
}

template <typename Scalar>
ImputationResult impute_window(const ImputationQuery& query, const Denoiser<Scalar>& model,
                               const DiffusionSchedule& schedule, const NormStats& stats,
                               int num_samples, std::uint64_t seed,
                               Objective objective = Objective::kPredictNoise) {
  return impute_window(query, make_predictor(model, query, num_samples), schedule, stats,
                       num_samples, seed, objective);
}

/// Imputes every query. Each window uses a stream derived from (seed,
/// start_index), so results do not depend on order or worker count.
template <typename Scalar>
std::vector<ImputationResult> impute_dataset(const std::vector<ImputationQuery>& queries,
                                             const Denoiser<Scalar>& model,
                                             const DiffusionSchedule& schedule,
                                             const NormStats& stats, int num_samples,
                                             std::uint64_t seed, int workers = 1,
                                             Objective objective = Objective::kPredictNoise) {
  std::vector<ImputationResult> out(queries.size());
  std::vector<std::exception_ptr> errors(queries.size());
  auto run = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < queries.size(); i += step) {
      try {
        out[i] = impute_window(queries[i], model, schedule, stats, num_samples, seed, objective);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n_workers = static_cast<std::size_t>(std::max(1, workers));
  if (n_workers == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(run, w, n_workers);
    for (auto& t : pool) t.join();
  }
  for (std::size_t i = 0; i < errors.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const CheckpointMismatch& e) {
      throw CheckpointMismatch("window index " + std::to_string(i) + ": " + e.what());
    } catch (const std::exception& e) {
      throw DivergenceError("window index " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace mtsci

#endif  // MTSCI_SAMPLER_HPP_
