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

#ifndef MTSCI_SYNTHETIC_HPP_
#define MTSCI_SYNTHETIC_HPP_

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "mtsci/common.hpp"
#include "mtsci/dataset.hpp"

namespace mtsci {

/// Features are noisy linear mixtures of a few shared latent sinusoids, so
/// a missing cell is predictable from the other features at the same step.
struct SyntheticSpec {
  long steps = 48000;
  int features = 5;
  int latents = 3;
  double period_min = 4.0;
  double period_max = 16.0;
  double noise = 0.1;
  std::uint64_t seed = 2024;
  std::int64_t start_time = 1577836800;  // 2020-01-01 00:00 UTC
  std::int64_t interval = 3600;
};

inline SeriesTable generate_synthetic(const SyntheticSpec& spec) {
  if (spec.steps < 1 || spec.features < 1 || spec.latents < 1)
    throw ConfigError("synthetic series needs steps, features and latents >= 1");
  if (!(spec.period_min > 0.0 && spec.period_max >= spec.period_min))
    throw ConfigError("synthetic periods must satisfy 0 < min <= max");
  Rng rng(derive_seed(spec.seed, 0x73796eULL));
  std::vector<double> period(static_cast<std::size_t>(spec.latents));
  std::vector<double> phase(period.size());
  for (std::size_t k = 0; k < period.size(); ++k) {
    period[k] = uniform(rng, spec.period_min, spec.period_max);
    phase[k] = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  }
  Matrix mixing(spec.features, spec.latents);
  for (Eigen::Index i = 0; i < mixing.size(); ++i) mixing.data()[i] = gaussian(rng);
  Vector offset(spec.features);
  for (int j = 0; j < spec.features; ++j) offset(j) = uniform(rng, -2.0, 2.0);

  SeriesTable t;
  t.values.resize(spec.steps, spec.features);
  t.native_mask = Mask::Constant(spec.steps, spec.features, true);
  t.timestamps.resize(static_cast<std::size_t>(spec.steps));
  for (int j = 0; j < spec.features; ++j) t.feature_names.push_back("f" + std::to_string(j));
  Vector latent(spec.latents);
  for (long i = 0; i < spec.steps; ++i) {
    for (int k = 0; k < spec.latents; ++k)
      latent(k) = std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / period[static_cast<std::size_t>(k)] +
                           phase[static_cast<std::size_t>(k)]);
    const Vector row = mixing * latent + offset;
    for (int j = 0; j < spec.features; ++j) t.values(i, j) = row(j) + spec.noise * gaussian(rng);
    t.timestamps[static_cast<std::size_t>(i)] = spec.start_time + i * spec.interval;
  }
  return t;
}

}  // namespace mtsci

#endif  // MTSCI_SYNTHETIC_HPP_
