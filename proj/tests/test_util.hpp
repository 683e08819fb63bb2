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

#ifndef MTSCI_TESTS_TEST_UTIL_HPP_
#define MTSCI_TESTS_TEST_UTIL_HPP_

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mtsci/autograd.hpp"
#include "mtsci/common.hpp"

namespace mtsci::testing {

/// Central-difference gradient of `f` with respect to every entry of each
/// variable in `params`, compared against the analytic gradient left by
/// `f` after a backward pass. Returns the largest relative error.
inline double max_gradient_error(const std::vector<ag::Var<double>>& params,
                                 const std::function<double(bool)>& f, double h = 1e-6,
                                 std::string* worst = nullptr) {
  for (auto& p : params) p->zero_grad();
  f(true);
  double max_err = 0.0;
  for (std::size_t n = 0; n < params.size(); ++n) {
    auto& p = params[n];
    const ag::Tensor<double> analytic =
        p->has_grad() ? p->grad : ag::Tensor<double>::Zero(p->value.rows(), p->value.cols());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      double& x = p->value.data()[i];
      const double saved = x;
      x = saved + h;
      const double up = f(false);
      x = saved - h;
      const double down = f(false);
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic.data()[i];
      const double err = std::abs(a - numeric) / std::max(1.0, std::abs(a) + std::abs(numeric));
      if (err > max_err) {
        max_err = err;
        if (worst) *worst = "param " + std::to_string(n) + " entry " + std::to_string(i);
      }
    }
  }
  return max_err;
}

inline ag::Tensor<double> random_tensor(Rng& rng, Eigen::Index rows, Eigen::Index cols,
                                        double scale = 1.0) {
  ag::Tensor<double> t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = scale * gaussian(rng);
  return t;
}

inline Mask mask_from_bits(unsigned bits, Eigen::Index rows, Eigen::Index cols) {
  Mask m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = (bits >> (i * cols + j)) & 1u;
  return m;
}

}  // namespace mtsci::testing

#endif  // MTSCI_TESTS_TEST_UTIL_HPP_
