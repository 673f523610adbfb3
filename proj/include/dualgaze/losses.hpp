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
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "dualgaze/errors.hpp"
#include "dualgaze/ops.hpp"
#include "dualgaze/tensor.hpp"

namespace dualgaze {

/// Gaze direction in radians. Pitch is vertical (positive up), yaw is
/// horizontal (positive toward the subject's left), z points forward.
struct GazeAngles {
  double pitch = 0.0;
  double yaw = 0.0;
  bool operator==(const GazeAngles&) const = default;
};

struct LossReport {
  double eye = 0.0;     // L1
  double region = 0.0;  // L2
  double gaze = 0.0;    // Lg
  double total = 0.0;
};

constexpr double degrees(double radians) { return radians * 180.0 / std::numbers::pi; }
constexpr double radians(double degrees) { return degrees * std::numbers::pi / 180.0; }

/// Mean squared error over all elements.
template <typename T>
Tensor<T> mse(const Tensor<T>& prediction, const Tensor<T>& target) {
  if (prediction.shape() != target.shape()) {
    throw DimensionError("mse: prediction " + to_string(prediction.shape()) +
                         " vs target " + to_string(target.shape()));
  }
  return mean(square(sub(prediction, target)));
}

template <typename T>
Tensor<T> eye_recon_loss(const Tensor<T>& recon_left, const Tensor<T>& recon_right,
                         const Tensor<T>& eye_left, const Tensor<T>& eye_right) {
  return add(mse(recon_left, eye_left), mse(recon_right, eye_right));
}

template <typename T>
Tensor<T> region_recon_loss(const Tensor<T>& recon_top, const Tensor<T>& recon_mid,
                            const Tensor<T>& recon_bot, const Tensor<T>& top,
                            const Tensor<T>& mid, const Tensor<T>& bot) {
  return add(add(mse(recon_top, top), mse(recon_mid, mid)), mse(recon_bot, bot));
}

/// Mean over samples of |d pitch| + |d yaw|; both inputs [n x 2].
template <typename T>
Tensor<T> gaze_loss(const Tensor<T>& prediction, const Tensor<T>& truth) {
  if (prediction.rank() != 2 || prediction.dim(1) != 2 ||
      prediction.shape() != truth.shape()) {
    throw DimensionError("gaze_loss expects matching [n x 2] tensors, got " +
                         to_string(prediction.shape()) + " and " + to_string(truth.shape()));
  }
  return scale(sum(abs(sub(prediction, truth))),
               T(1) / static_cast<T>(prediction.dim(0)));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& eye, const Tensor<T>& region, const Tensor<T>& gaze,
                     double lambda_eye, double lambda_region) {
  return add(gaze, add(scale(eye, static_cast<T>(lambda_eye)),
                       scale(region, static_cast<T>(lambda_region))));
}

using Vec3 = std::array<double, 3>;

/// Unit vector (cos p sin y, sin p, cos p cos y).
inline Vec3 angles_to_vector(const GazeAngles& a) {
  return {std::cos(a.pitch) * std::sin(a.yaw), std::sin(a.pitch),
          std::cos(a.pitch) * std::cos(a.yaw)};
}

/// Inverse of angles_to_vector for any nonzero v.
inline GazeAngles vector_to_angles(const Vec3& v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  if (!(n > 0.0) || !std::isfinite(n)) throw MetricError("gaze vector has zero norm");
  return {std::asin(std::clamp(v[1] / n, -1.0, 1.0)), std::atan2(v[0], v[2])};
}

/// Angle between two directions in degrees.
inline double angular_error(const Vec3& g, const Vec3& truth) {
  const double gg = g[0] * g[0] + g[1] * g[1] + g[2] * g[2];
  const double tt = truth[0] * truth[0] + truth[1] * truth[1] + truth[2] * truth[2];
  if (!(gg > 0.0) || !(tt > 0.0)) throw MetricError("angular error of a zero-norm vector");
  if (!std::isfinite(gg) || !std::isfinite(tt)) throw MetricError("non-finite gaze vector");
  const double dot = g[0] * truth[0] + g[1] * truth[1] + g[2] * truth[2];
  // sqrt(gg * gg) == gg exactly, so identical inputs give cos == 1.
  const double cosine = std::clamp(dot / std::sqrt(gg * tt), -1.0, 1.0);
  return degrees(std::acos(cosine));
}

inline double angular_error(const GazeAngles& prediction, const GazeAngles& truth) {
  return angular_error(angles_to_vector(prediction), angles_to_vector(truth));
}

}  // namespace dualgaze
