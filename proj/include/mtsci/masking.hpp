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

#ifndef MTSCI_MASKING_HPP_
#define MTSCI_MASKING_HPP_

#include <algorithm>
#include <optional>
#include <string>

#include "mtsci/common.hpp"
#include "mtsci/dataset.hpp"

namespace mtsci {

/// Self-supervised target selection used during training.
struct MaskStrategy {
  enum class Kind { kPoint, kBlock } kind = Kind::kPoint;
  /// Upper bound of the per-window ratio: point in [0, 1], block in [0, 0.15].
  double ratio_max = 1.0;
  /// When set, the per-window ratio is fixed instead of drawn from [0, ratio_max].
  std::optional<double> fixed_ratio;

  static constexpr double kBlockRatioCap = 0.15;

  static MaskStrategy point(double ratio_max = 1.0) { return {Kind::kPoint, ratio_max, {}}; }
  static MaskStrategy block(double ratio_max = kBlockRatioCap) {
    return {Kind::kBlock, ratio_max, {}};
  }

  void validate() const {
    const double cap = kind == Kind::kPoint ? 1.0 : kBlockRatioCap;
    const char* key = kind == Kind::kPoint ? "mask.point_ratio_max" : "mask.block_prob_max";
    if (!(ratio_max >= 0.0 && ratio_max <= cap))
      throw ConfigError(std::string(key) + " must lie in [0, " + std::to_string(cap) + "]");
    if (fixed_ratio && !(*fixed_ratio >= 0.0 && *fixed_ratio <= cap))
      throw ConfigError("fixed mask ratio outside [0, " + std::to_string(cap) + "]");
  }
};

inline MaskStrategy::Kind parse_mask_kind(const std::string& s) {
  if (s == "point") return MaskStrategy::Kind::kPoint;
  if (s == "block") return MaskStrategy::Kind::kBlock;
  throw ConfigError("mask.kind must be point or block, got '" + s + "'");
}

inline std::string to_string(MaskStrategy::Kind k) {
  return k == MaskStrategy::Kind::kPoint ? "point" : "block";
}

/// Draws a target mask m over the observed cells of one window.
inline Mask sample_training_mask(const Mask& obs_mask, const MaskStrategy& strategy, Rng& rng) {
  strategy.validate();
  const auto len = obs_mask.rows();
  const auto c = obs_mask.cols();
  const double r = strategy.fixed_ratio ? *strategy.fixed_ratio
                                        : uniform(rng, 0.0, strategy.ratio_max);
  Mask m = Mask::Constant(len, c, false);
  if (strategy.kind == MaskStrategy::Kind::kPoint) {
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < len; ++i)
        if (obs_mask(i, j) && bernoulli(rng, r)) m(i, j) = true;
    return m;
  }
  const int min_len = static_cast<int>(len / 2), max_len = static_cast<int>(len);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < len; ++i)
      if (bernoulli(rng, r)) {
        const Eigen::Index block = uniform_int(rng, min_len, max_len);
        for (Eigen::Index t = i; t < std::min(len, i + block); ++t) m(t, j) = true;
      }
  return m && obs_mask;
}

inline Mask sample_training_mask(const Mask& obs_mask, const MaskStrategy& strategy,
                                 std::uint64_t seed) {
  Rng rng(seed);
  return sample_training_mask(obs_mask, strategy, rng);
}

/// One view of a window: which cells the model must reconstruct and which
/// cells it may condition on.
struct View {
  Mask target;
  Mask cond;
};

/// The pair of complementary views induced by a target mask m.
struct ComplementaryViews {
  View view1;  // targets m, conditions on the remaining observed cells
  View view2;  // roles swapped
  Mask m;
};

/// `observed` is the set of cells available for training (observed and not
/// held out for evaluation).
inline ComplementaryViews complementary_views(const Mask& observed, const Mask& m) {
  if (m.rows() != observed.rows() || m.cols() != observed.cols())
    throw ValidationError("complementary_views: mask shape mismatch");
  if ((m && !observed).any())
    throw ValidationError("complementary_views: target mask selects unobserved cells");
  const Mask rest = observed && !m;
  return {{m, rest}, {rest, m}, m};
}

inline ComplementaryViews complementary_views(const Window& w, const Mask& m) {
  return complementary_views(w.cond_mask(), m);
}

}  // namespace mtsci

#endif  // MTSCI_MASKING_HPP_
