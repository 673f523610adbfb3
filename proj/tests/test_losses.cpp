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

#include <gtest/gtest.h>

#include <cmath>

#include "dualgaze/losses.hpp"
#include "dualgaze/random.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

namespace dualgaze {
namespace {

using testing::random_tensor;
using Td = Tensor<double>;

TEST(Losses, MseMatchesScalarLoop) {
  const Td a = random_tensor({2, 3, 4, 5}, 1), b = random_tensor({2, 3, 4, 5}, 2);
  EXPECT_NEAR(mse(a, b).item(), oracle::mse(a, b), 1e-12);
  EXPECT_EQ(mse(a, a).item(), 0.0);
  EXPECT_THROW(mse(a, random_tensor({2, 3, 5, 4}, 2)), DimensionError);
}

TEST(Losses, EyeAndRegionLossesMatchScalarLoops) {
  const Td rl = random_tensor({2, 3, 4, 6}, 1, 0, 1), rr = random_tensor({2, 3, 4, 6}, 2, 0, 1);
  const Td el = random_tensor({2, 3, 4, 6}, 3, 0, 1), er = random_tensor({2, 3, 4, 6}, 4, 0, 1);
  EXPECT_NEAR(eye_recon_loss(rl, rr, el, er).item(), oracle::mse(rl, el) + oracle::mse(rr, er), 1e-12);

  const Td t = random_tensor({2, 3, 5, 8}, 5, 0, 1), m = random_tensor({2, 3, 4, 8}, 6, 0, 1),
           b = random_tensor({2, 3, 7, 8}, 7, 0, 1);
  const Td pt = random_tensor(t.shape(), 8, 0, 1), pm = random_tensor(m.shape(), 9, 0, 1),
           pb = random_tensor(b.shape(), 10, 0, 1);
  EXPECT_NEAR(region_recon_loss(pt, pm, pb, t, m, b).item(),
              oracle::mse(pt, t) + oracle::mse(pm, m) + oracle::mse(pb, b), 1e-12);
}

TEST(Losses, GazeLossIsMeanAbsoluteAngleSum) {
  const Td p = random_tensor({7, 2}, 1), g = random_tensor({7, 2}, 2);
  double ref = 0.0;
  for (std::size_t i = 0; i < 7; ++i) {
    ref += std::abs(p.at({i, 0}) - g.at({i, 0})) + std::abs(p.at({i, 1}) - g.at({i, 1}));
  }
  EXPECT_NEAR(gaze_loss(p, g).item(), ref / 7.0, 1e-12);
  EXPECT_EQ(gaze_loss(p, p).item(), 0.0);
  EXPECT_THROW(gaze_loss(random_tensor({7, 3}, 1), random_tensor({7, 3}, 2)), DimensionError);
  EXPECT_THROW(gaze_loss(p, random_tensor({6, 2}, 2)), DimensionError);
}

TEST(Losses, GazeLossGradientIsSignOverBatch) {
  const Td p = testing::tracked(random_tensor({5, 2}, 3)), g = random_tensor({5, 2}, 4);
  testing::backprop([&] { return gaze_loss(p, g); });
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_DOUBLE_EQ(p.grad()[i], (p[i] > g[i] ? 1.0 : -1.0) / 5.0);
  }
}

TEST(Losses, TotalLossWeightsTerms) {
  const Td e = Td::scalar(0.5), r = Td::scalar(0.25), g = Td::scalar(2.0);
  EXPECT_DOUBLE_EQ(total_loss(e, r, g, 1.0, 1.0).item(), 2.75);
  EXPECT_DOUBLE_EQ(total_loss(e, r, g, 2.0, 4.0).item(), 4.0);
  EXPECT_DOUBLE_EQ(total_loss(e, r, g, 0.0, 0.0).item(), 2.0);
}

TEST(Angles, UnitConversions) {
  EXPECT_DOUBLE_EQ(degrees(std::numbers::pi), 180.0);
  EXPECT_DOUBLE_EQ(radians(90.0), std::numbers::pi / 2);
}

TEST(Angles, VectorRoundTrip) {
  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const GazeAngles a{radians(rng.uniform(-80, 80)), radians(rng.uniform(-170, 170))};
    const Vec3 v = angles_to_vector(a);
    EXPECT_NEAR(v[0] * v[0] + v[1] * v[1] + v[2] * v[2], 1.0, 1e-14);
    const GazeAngles b = vector_to_angles(v);
    EXPECT_NEAR(b.pitch, a.pitch, 1e-12);
    EXPECT_NEAR(b.yaw, a.yaw, 1e-12);
    const GazeAngles c = vector_to_angles({3 * v[0], 3 * v[1], 3 * v[2]});
    EXPECT_NEAR(c.pitch, a.pitch, 1e-12);
  }
  EXPECT_THROW(vector_to_angles({0, 0, 0}), MetricError);
}

TEST(Angles, ForwardDirection) {
  const Vec3 v = angles_to_vector({0, 0});
  EXPECT_EQ(v, (Vec3{0, 0, 1}));
  EXPECT_GT(angles_to_vector({radians(10), 0})[1], 0.0);
  EXPECT_GT(angles_to_vector({0, radians(10)})[0], 0.0);
}

TEST(AngularError, ClosedForms) {
  EXPECT_NEAR(angular_error(GazeAngles{0, 0}, GazeAngles{0, radians(30)}), 30.0, 1e-12);
  EXPECT_NEAR(angular_error(GazeAngles{radians(10), 0}, GazeAngles{radians(-10), 0}), 20.0, 1e-12);
  EXPECT_NEAR(angular_error(Vec3{1, 0, 0}, Vec3{0, 1, 0}), 90.0, 1e-12);
  EXPECT_NEAR(angular_error(Vec3{1, 0, 0}, Vec3{-2, 0, 0}), 180.0, 1e-12);
}

TEST(AngularError, IdenticalDirectionsGiveExactlyZero) {
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const GazeAngles a{radians(rng.uniform(-25, 25)), radians(rng.uniform(-25, 25))};
    EXPECT_EQ(angular_error(a, a), 0.0);
  }
}

TEST(AngularError, MetricProperties) {
  Rng rng(10);
  auto draw = [&] { return GazeAngles{radians(rng.uniform(-40, 40)), radians(rng.uniform(-40, 40))}; };
  for (int i = 0; i < 500; ++i) {
    const GazeAngles a = draw(), b = draw(), c = draw();
    const double ab = angular_error(a, b);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 180.0);
    EXPECT_DOUBLE_EQ(ab, angular_error(b, a));
    EXPECT_LE(ab, angular_error(a, c) + angular_error(c, b) + 1e-9);
    const Vec3 va = angles_to_vector(a), vb = angles_to_vector(b);
    EXPECT_NEAR(angular_error(Vec3{5 * va[0], 5 * va[1], 5 * va[2]}, vb), ab, 1e-9);
  }
}

TEST(AngularError, RejectsDegenerateVectors) {
  EXPECT_THROW(angular_error(Vec3{0, 0, 0}, Vec3{0, 0, 1}), MetricError);
  EXPECT_THROW(angular_error(Vec3{0, 0, 1}, Vec3{0, 0, 0}), MetricError);
  EXPECT_THROW(angular_error(Vec3{NAN, 0, 1}, Vec3{0, 0, 1}), MetricError);
  EXPECT_THROW(angular_error(Vec3{INFINITY, 0, 1}, Vec3{0, 0, 1}), MetricError);
}

}  // namespace
}  // namespace dualgaze
