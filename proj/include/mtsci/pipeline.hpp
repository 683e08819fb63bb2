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

#ifndef MTSCI_PIPELINE_HPP_
#define MTSCI_PIPELINE_HPP_

// End-to-end glue: split, window, hold out, normalize, train, impute, score.

#include <map>
#include <string>
#include <vector>

#include "mtsci/common.hpp"
#include "mtsci/dataset.hpp"
#include "mtsci/denoiser.hpp"
#include "mtsci/diffusion.hpp"
#include "mtsci/metrics.hpp"
#include "mtsci/sampler.hpp"
#include "mtsci/training.hpp"

namespace mtsci {

/// Windows of every split in physical units, with evaluation masks applied.
struct DataBundle {
  NormStats norm;
  std::vector<std::string> feature_names;
  std::vector<Window> train, val, test;

  std::vector<Window>& split(const std::string& name) {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "'");
  }
  const std::vector<Window>& split(const std::string& name) const {
    return const_cast<DataBundle*>(this)->split(name);
  }
};

inline const std::vector<std::string>& split_names() {
  static const std::vector<std::string> names = {"train", "val", "test"};
  return names;
}

/// Splits `series`, cuts non-overlapping windows of `length` and marks
/// evaluation targets with `pattern`.
inline DataBundle prepare_data(const SeriesTable& series, const SplitSpec& split, int length,
                               const MissingPattern& pattern, std::uint64_t mask_seed) {
  const Splits parts = split_series(series, split);
  DataBundle b;
  b.norm = fit_normalizer(parts.train);
  b.feature_names = series.feature_names;
  b.train = simulate_missing(make_windows(parts.train, length), pattern, mask_seed);
  b.val = simulate_missing(make_windows(parts.val, length), pattern, mask_seed);
  b.test = simulate_missing(make_windows(parts.test, length), pattern, mask_seed);
  return b;
}

/// Copies with values in normalized units and unobserved cells zeroed.
inline std::vector<Window> normalize_windows(const std::vector<Window>& windows,
                                             const NormStats& norm) {
  std::vector<Window> out = windows;
  for (auto& w : out) w.values = norm.apply(w.values).cwiseProduct(to_real(w.obs_mask));
  return out;
}

template <typename Scalar>
TrainResult train_denoiser(Denoiser<Scalar>& model, const DataBundle& data,
                           const DiffusionSchedule& schedule, const TrainConfig& config,
                           const ResumeState* resume = nullptr,
                           const typename Trainer<Scalar>::EpochCallback& on_epoch = {}) {
  Trainer<Scalar> trainer(model, schedule, config);
  const auto pairs = pair_with_context(normalize_windows(data.train, data.norm));
  return trainer.fit(pairs, normalize_windows(data.val, data.norm), resume, on_epoch);
}

inline std::vector<ImputationQuery> make_queries(const std::vector<Window>& raw,
                                                 const NormStats& norm) {
  std::vector<ImputationQuery> out;
  out.reserve(raw.size());
  for (const auto& w : raw) out.push_back(make_query(w, norm));
  return out;
}

/// Point scores and CRPS over the evaluation cells of `windows`.
inline ScoreReport score_results(const std::vector<Window>& windows,
                                 const std::vector<ImputationResult>& results,
                                 double mape_floor = 1e-4,
                                 const std::vector<double>& levels = default_quantile_levels()) {
  if (windows.size() != results.size()) throw ValidationError("score_results: size mismatch");
  PointAccumulator point;
  point.mape_floor = mape_floor;
  CrpsAccumulator crps;
  bool have_crps = true;
  std::vector<double> q(levels.size());
  for (std::size_t n = 0; n < windows.size(); ++n) {
    const Window& w = windows[n];
    const ImputationResult& r = results[n];
    std::vector<Matrix> quant;
    if (r.samples.size() >= 2)
      for (double lv : levels) quant.push_back(r.quantile(lv));
    else
      have_crps = false;
    for (Eigen::Index j = 0; j < w.values.cols(); ++j)
      for (Eigen::Index i = 0; i < w.values.rows(); ++i) {
        if (!w.eval_mask(i, j)) continue;
        point.add(w.values(i, j), r.point_estimate(i, j));
        if (!quant.empty()) {
          for (std::size_t k = 0; k < levels.size(); ++k) q[k] = quant[k](i, j);
          crps.add(w.values(i, j), q, levels);
        }
      }
  }
  if (point.n == 0) throw ValidationError("no evaluation cells to score");
  const PointScores ps = point.finish();
  ScoreReport rep;
  rep.mae = ps.mae;
  rep.rmse = ps.rmse;
  rep.mape = ps.mape;
  rep.n_cells = ps.n_cells;
  rep.mape_excluded = ps.mape_excluded;
  if (have_crps) rep.crps = crps.finish();
  return rep;
}

/// Point scores of deterministic estimates (one L x C matrix per window).
inline ScoreReport score_estimates(const std::vector<Window>& windows,
                                   const std::vector<Matrix>& estimates, double mape_floor = 1e-4) {
  std::vector<ImputationResult> wrapped(estimates.size());
  for (std::size_t n = 0; n < estimates.size(); ++n) {
    wrapped[n].point_estimate = estimates[n];
    wrapped[n].samples = {estimates[n]};
  }
  return score_results(windows, wrapped, mape_floor);
}

enum class BaselineKind { kMean, kLinear };

inline BaselineKind parse_baseline(const std::string& s) {
  if (s == "mean") return BaselineKind::kMean;
  if (s == "linear") return BaselineKind::kLinear;
  throw ConfigError("baseline must be mean or linear, got '" + s + "'");
}

inline std::vector<Matrix> run_baseline(BaselineKind kind, const std::vector<ImputationQuery>& queries,
                                        const NormStats& norm) {
  std::vector<Matrix> out;
  out.reserve(queries.size());
  for (const auto& q : queries)
    out.push_back(kind == BaselineKind::kMean ? mean_baseline(q, norm.mean)
                                              : linear_interp_baseline(q, norm.mean));
  return out;
}

}  // namespace mtsci

#endif  // MTSCI_PIPELINE_HPP_
