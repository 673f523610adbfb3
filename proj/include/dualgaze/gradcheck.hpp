// Copyright (c) 2026 The dualgaze Authors. All Rights Reserved.
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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "dualgaze/ops.hpp"
#include "dualgaze/random.hpp"
#include "dualgaze/tape.hpp"
#include "dualgaze/tensor.hpp"

namespace dualgaze {

struct GradCheckOptions {
  double eps = 1e-4;
  // Coordinates probed per tensor; 0 means every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
  // Also difference with eps / 10 and keep the smaller error. A step that
  // straddles a ReLU or max kink disagrees at one size only; a wrong
  // gradient disagrees at both.
  bool kink_robust = false;
};

struct GradCheckResult {
  double max_error = 0.0;
  std::size_t coordinates = 0;
  // "tensor#index" of the worst coordinate.
  std::string worst;
};

/// Compares tape gradients of the scalar f() with central differences for
/// every tensor in wrt, perturbing their values in place.
///
/// The error per coordinate is |analytic - numeric| / max(1, |numeric|).
/// f must be deterministic; results for a stochastic f are meaningless.
template <typename T, typename F>
GradCheckResult finite_diff_check(F&& f, std::vector<Tensor<T>> wrt,
                                  const GradCheckOptions& options = {},
                                  const std::vector<std::string>& names = {}) {
  for (auto& t : wrt) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<T> tape;
    Tensor<T> loss;
    {
      TapeScope<T> scope(tape);
      loss = f();
    }
    tape.backward(loss);
  }

  auto evaluate = [&f] {
    NoGradScope<T> no_grad;
    return static_cast<double>(f().item());
  };

  Rng rng(options.seed);
  GradCheckResult result;
  for (std::size_t t = 0; t < wrt.size(); ++t) {
    Tensor<T>& x = wrt[t];
    const std::vector<T> analytic(x.grad().begin(), x.grad().end());
    std::vector<std::size_t> coords(x.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords != 0 && coords.size() > options.max_coords) {
      rng.shuffle(coords);
      coords.resize(options.max_coords);
    }
    auto values = x.mutable_data();
    for (std::size_t i : coords) {
      const T original = values[i];
      auto error_at = [&](double eps) {
        values[i] = original + static_cast<T>(eps);
        const double plus = evaluate();
        values[i] = original - static_cast<T>(eps);
        const double minus = evaluate();
        values[i] = original;
        const double numeric = (plus - minus) / (2.0 * eps);
        return std::abs(static_cast<double>(analytic[i]) - numeric) /
               std::max(1.0, std::abs(numeric));
      };
      double err = error_at(options.eps);
      if (options.kink_robust) err = std::min(err, error_at(options.eps / 10.0));
      ++result.coordinates;
      if (err >= result.max_error) {
        result.max_error = err;
        result.worst = (t < names.size() ? names[t] : "#" + std::to_string(t)) +
                       "[" + std::to_string(i) + "]";
      }
    }
    x.zero_grad();
  }
  return result;
}

/// Single-input form: the max relative error over all coordinates of x.
template <typename T, typename F>
double finite_diff_check(F&& f, Tensor<T> x, double eps = 1e-4) {
  GradCheckOptions options;
  options.eps = eps;
  return finite_diff_check<T>(std::forward<F>(f), std::vector<Tensor<T>>{x},
                              options)
      .max_error;
}

}  // namespace dualgaze
