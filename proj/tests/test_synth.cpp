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
#include <set>

#include "dualgaze/synth.hpp"
#include "test_helpers.hpp"

namespace dualgaze {
namespace {

using testing::values;
using Td = Tensor<double>;

const FaceLayout kLayout = face_layout(64, 64);

SampleRecipe recipe(double pitch_deg, double yaw_deg, double roll_deg = 0.0,
                    double brightness = 1.0, std::uint64_t seed = 1) {
  return {seed, {radians(pitch_deg), radians(yaw_deg)}, brightness, radians(roll_deg)};
}

struct Point {
  double y = 0.0, x = 0.0;
};

// Coverage-weighted centroids of the two pupils, found as the difference
// between renders with and without pupils. Pixels are split between the eyes
// by the vertical face midline.
std::array<Point, 2> pupil_centroids(const SampleRecipe& r) {
  const Td with = render_scene<double>(kLayout, r, {false, true});
  const Td without = render_scene<double>(kLayout, r, {false, false});
  std::array<Point, 2> c{};
  std::array<double, 2> mass{};
  for (std::size_t i = 0; i < 64; ++i) {
    for (std::size_t j = 0; j < 64; ++j) {
      const double d = without.at({0, i, j}) - with.at({0, i, j});
      if (d <= 0.0) continue;
      const int e = j < 32 ? 0 : 1;
      mass[e] += d;
      c[e].y += d * (static_cast<double>(i) + 0.5);
      c[e].x += d * (static_cast<double>(j) + 0.5);
    }
  }
  for (int e = 0; e < 2; ++e) {
    c[e].y /= mass[e];
    c[e].x /= mass[e];
  }
  return c;
}

// Non-learned estimate of (pitch, yaw): the roll follows from the line
// through both pupils, the gaze from the pupil offsets in the unrolled frame.
GazeAngles centroid_oracle(const SampleRecipe& r) {
  const SceneGeometry g = scene_geometry(kLayout);
  const auto c = pupil_centroids(r);
  const double roll = std::atan2(c[1].y - c[0].y, c[1].x - c[0].x);
  const double cr = std::cos(roll), sr = std::sin(roll);
  double dy = 0.0, dx = 0.0;
  for (int e = 0; e < 2; ++e) {
    // Back into the upright scene: rotate about the face centre by -roll.
    const double py = c[e].y - g.center_y, px = c[e].x - g.center_x;
    const double uy = g.center_y + cr * py - sr * px;
    const double ux = g.center_x + sr * py + cr * px;
    dy += 0.5 * (uy - g.sclera[e].cy);
    dx += 0.5 * (ux - g.sclera[e].cx);
  }
  return {std::atan(-dy / g.gain_y), std::atan(dx / g.gain_x)};
}

TEST(Render, ShapeRangeAndDeterminism) {
  const SampleRecipe r = sample_recipe(sample_seed(7, 3));
  const Td a = render_scene<double>(kLayout, r);
  const Td b = render_scene<double>(kLayout, r);
  EXPECT_EQ(a.shape(), (Shape{3, 64, 64}));
  EXPECT_EQ(values(a), values(b));
  for (double v : values(a)) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  SampleRecipe other = r;
  other.seed += 1;
  EXPECT_NE(values(render_scene<double>(kLayout, other)), values(a));
}

TEST(Render, RejectsAnglesOutsideRange) {
  EXPECT_THROW(render_scene<double>(kLayout, recipe(26, 0)), ConfigError);
  EXPECT_THROW(render_scene<double>(kLayout, recipe(0, -25.5)), ConfigError);
  EXPECT_NO_THROW(render_scene<double>(kLayout, recipe(25, -25)));
}

TEST(Render, NoiseIsBoundedAndBrightnessScales) {
  const SampleRecipe r = recipe(5, -3, 0, 1.0, 42);
  const Td noisy = render_scene<double>(kLayout, r);
  const Td clean = render_scene<double>(kLayout, r, {false, true});
  for (std::size_t i = 0; i < clean.size(); ++i) {
    EXPECT_LE(std::abs(noisy[i] - clean[i]), kNoiseAmplitude + 1e-12);
  }
  const Td dim = render_scene<double>(kLayout, recipe(5, -3, 0, 0.5, 42), {false, true});
  for (std::size_t i = 0; i < clean.size(); ++i) EXPECT_NEAR(dim[i], 0.5 * clean[i], 1e-12);
}

TEST(Render, ZeroGazeCentresPupils) {
  const SceneGeometry g = scene_geometry(kLayout);
  const auto c = pupil_centroids(recipe(0, 0));
  for (int e = 0; e < 2; ++e) {
    EXPECT_NEAR(c[e].y, g.sclera[e].cy, 0.05);
    EXPECT_NEAR(c[e].x, g.sclera[e].cx, 0.05);
  }
}

TEST(Render, OppositeYawMirrorsPupilOffsets) {
  const SceneGeometry g = scene_geometry(kLayout);
  const auto plus = pupil_centroids(recipe(0, 20));
  const auto minus = pupil_centroids(recipe(0, -20));
  for (int e = 0; e < 2; ++e) {
    const double a = plus[e].x - g.sclera[e].cx, b = minus[e].x - g.sclera[e].cx;
    EXPECT_GT(a, 1.0);
    EXPECT_NEAR(a, -b, 1.0);
  }
  // Same check on the darkest pixel of each eye box.
  auto argmax_x = [](const Td& img, const Box& box) {
    double best = 2.0;
    std::size_t col = 0;
    for (std::size_t i = box.y; i < box.y + box.h; ++i)
      for (std::size_t j = box.x; j < box.x + box.w; ++j)
        if (img.at({0, i, j}) < best) best = img.at({0, i, j}), col = j;
    return static_cast<double>(col);
  };
  const Td p = render_scene<double>(kLayout, recipe(0, 20), {false, true});
  const Td m = render_scene<double>(kLayout, recipe(0, -20), {false, true});
  for (const Box& b : {kLayout.left_eye, kLayout.right_eye}) {
    const double centre = b.center_x() - 0.5;
    EXPECT_NEAR(argmax_x(p, b) - centre, centre - argmax_x(m, b), 1.0);
  }
}

TEST(Render, PupilsStayInsideEyeBoxesAtExtremes) {
  for (double p : {-25.0, 25.0}) {
    for (double y : {-25.0, 25.0}) {
      const Td with = render_scene<double>(kLayout, recipe(p, y, 5), {false, true});
      const Td without = render_scene<double>(kLayout, recipe(p, y, 5), {false, false});
      for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t j = 0; j < 64; ++j)
          if (with.at({0, i, j}) != without.at({0, i, j})) {
            EXPECT_TRUE(kLayout.left_eye.contains(i, j) || kLayout.right_eye.contains(i, j))
                << i << "," << j;
          }
    }
  }
}

TEST(Render, CentroidOracleRecoversTruthWithinTwoDegrees) {
  double worst = 0.0;
  for (std::size_t i = 0; i < 200; ++i) {
    const SampleRecipe r = sample_recipe(sample_seed(123, i));
    const GazeAngles est = centroid_oracle(r);
    worst = std::max({worst, std::abs(degrees(est.pitch - r.truth.pitch)),
                      std::abs(degrees(est.yaw - r.truth.yaw))});
  }
  EXPECT_LT(worst, 2.0);
}

TEST(Crop, EyesAreExactCopiesWhenExtentsMatch) {
  const Td face = render_scene<double>(kLayout, recipe(3, 4, 1, 1.1, 5));
  const auto [l, r] = crop_eyes(face, kLayout, 16, 24);
  EXPECT_EQ(l.shape(), (Shape{3, 16, 24}));
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t i = 0; i < 16; ++i)
      for (std::size_t j = 0; j < 24; ++j) {
        EXPECT_EQ(l.at({k, i, j}), face.at({k, 20 + i, 6 + j}));
        EXPECT_EQ(r.at({k, i, j}), face.at({k, 20 + i, 34 + j}));
      }
}

TEST(Crop, ResizedEyesHaveConfiguredExtents) {
  const Td face = render_scene<double>(kLayout, recipe(3, 4));
  const auto [l, r] = crop_eyes(face, kLayout, 24, 40);
  EXPECT_EQ(l.shape(), (Shape{3, 24, 40}));
  EXPECT_EQ(r.shape(), (Shape{3, 24, 40}));
  const Td flat({3, 64, 64}, 0.37);
  const auto [fl, fr] = crop_eyes(flat, kLayout, 24, 40);
  for (double v : values(fl)) EXPECT_NEAR(v, 0.37, 1e-15);
  EXPECT_THROW(crop(flat, Box{60, 0, 8, 8}), DimensionError);
}

TEST(RegionSplit, PartitionMaskAndRoundTrip) {
  const Td face = render_scene<double>(kLayout, recipe(-7, 12, -2, 0.9, 77));
  const auto [top, mid, bot] = region_split(face, kLayout);
  EXPECT_EQ(top.dim(1) + mid.dim(1) + bot.dim(1), 64u);
  const auto [l, r] = crop_eyes(face, kLayout, 16, 24);

  Td rebuilt({3, 64, 64});
  auto out = rebuilt.mutable_data();
  std::size_t covered = 0;
  auto paste = [&](const Td& part, const Box& at) {
    for (std::size_t k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < at.h; ++i)
        for (std::size_t j = 0; j < at.w; ++j) {
          const double v = part.at({k, i, j});
          const std::size_t y = at.y + i, x = at.x + j;
          const bool eye = kLayout.left_eye.contains(y, x) || kLayout.right_eye.contains(y, x);
          if (&part == &mid && eye) {
            EXPECT_EQ(v, 0.0);
            continue;
          }
          out[(k * 64 + y) * 64 + x] = v;
          covered += k == 0;
        }
  };
  paste(top, kLayout.top_region());
  paste(mid, kLayout.mid_region());
  paste(bot, kLayout.bottom_region());
  // Every non-eye pixel exactly once.
  EXPECT_EQ(covered, 64u * 64u - 2u * 16u * 24u);
  paste(l, kLayout.left_eye);
  paste(r, kLayout.right_eye);
  EXPECT_EQ(values(rebuilt), values(face));
}

TEST(Dataset, SplitCountsAndDisjointSeeds) {
  DatasetSpec spec;
  EXPECT_EQ(spec.train_count(), 2000u);
  EXPECT_EQ(spec.count - spec.train_count(), 500u);
  std::set<std::uint64_t> seeds;
  for (const auto& r : dataset_recipes(spec)) EXPECT_TRUE(seeds.insert(r.seed).second);

  spec.count = 30;
  const auto d = dataset_generate<float>(spec);
  EXPECT_EQ(d.train.size(), 24u);
  EXPECT_EQ(d.test.size(), 6u);
  std::set<std::uint64_t> train_seeds;
  for (const auto& s : d.train) train_seeds.insert(s.recipe.seed);
  for (const auto& s : d.test) EXPECT_EQ(train_seeds.count(s.recipe.seed), 0u);
  const auto& s = d.train[0];
  EXPECT_EQ(s.face.shape(), (Shape{3, 64, 64}));
  EXPECT_EQ(s.eye_left.shape(), (Shape{3, 24, 40}));
  EXPECT_EQ(s.region_top.shape(), (Shape{3, 20, 64}));
  EXPECT_EQ(s.region_mid.shape(), (Shape{3, 16, 64}));
  EXPECT_EQ(s.region_bot.shape(), (Shape{3, 28, 64}));
}

TEST(Dataset, GenerationIsDeterministic) {
  DatasetSpec spec;
  spec.count = 12;
  spec.seed = 99;
  const auto a = dataset_generate<float>(spec);
  const auto b = dataset_generate<float>(spec);
  ASSERT_EQ(a.train.size(), b.train.size());
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    EXPECT_TRUE(std::ranges::equal(a.train[i].face.data(), b.train[i].face.data()));
    EXPECT_TRUE(std::ranges::equal(a.train[i].eye_right.data(), b.train[i].eye_right.data()));
    EXPECT_EQ(a.train[i].truth, b.train[i].truth);
  }
}

TEST(Dataset, RecipeStatistics) {
  DatasetSpec spec;
  spec.count = 10000;
  spec.seed = 2024;
  double pitch = 0.0, yaw = 0.0;
  for (const auto& r : dataset_recipes(spec)) {
    EXPECT_LE(std::abs(degrees(r.truth.pitch)), kMaxGazeDegrees);
    EXPECT_LE(std::abs(degrees(r.roll)), kMaxRollDegrees);
    EXPECT_GE(r.brightness, 0.7);
    EXPECT_LE(r.brightness, 1.3);
    pitch += degrees(r.truth.pitch);
    yaw += degrees(r.truth.yaw);
  }
  const double bound = 3.0 * (25.0 / std::sqrt(3.0)) / std::sqrt(10000.0);
  EXPECT_LT(std::abs(pitch / 10000.0), bound);
  EXPECT_LT(std::abs(yaw / 10000.0), bound);
}

TEST(Dataset, RejectsBadSpecs) {
  DatasetSpec spec;
  spec.count = 0;
  EXPECT_THROW(dataset_generate<float>(spec), ConfigError);
  spec.count = 10;
  spec.split_ratio = 1.5;
  EXPECT_THROW(dataset_generate<float>(spec), ConfigError);
}

}  // namespace
}  // namespace dualgaze
