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
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <tuple>
#include <utility>
#include <vector>

#include "dualgaze/errors.hpp"
#include "dualgaze/geometry.hpp"
#include "dualgaze/losses.hpp"
#include "dualgaze/ops.hpp"
#include "dualgaze/random.hpp"
#include "dualgaze/tape.hpp"
#include "dualgaze/tensor.hpp"

namespace dualgaze {

/// Everything that determines one rendered sample.
struct SampleRecipe {
  std::uint64_t seed = 0;
  GazeAngles truth;
  double brightness = 1.0;
  double roll = 0.0;  // radians, in-plane head rotation about the face centre
};

struct RenderOptions {
  bool noise = true;
  bool pupils = true;
};

inline constexpr double kMaxGazeDegrees = 25.0;
inline constexpr double kMaxRollDegrees = 5.0;
inline constexpr double kNoiseAmplitude = 0.02;

struct Ellipse {
  double cy, cx, ry, rx;
  bool contains(double y, double x) const {
    const double u = (y - cy) / ry, v = (x - cx) / rx;
    return u * u + v * v <= 1.0;
  }
};

/// Face-relative placement of the drawn features.
struct SceneGeometry {
  double center_y, center_x;
  Ellipse head;
  std::array<Ellipse, 2> sclera;  // left, right
  std::array<Ellipse, 2> brows;
  Ellipse mouth;
  double nose_x0, nose_x1, nose_y0, nose_y1;
  double pupil_radius;
  // Pupil displacement in pixels per unit tangent of the gaze angle; a 25
  // degree gaze moves the pupil by 70% of the sclera semi-axis.
  double gain_x, gain_y;
};

inline SceneGeometry scene_geometry(const FaceLayout& l) {
  const double h = static_cast<double>(l.height), w = static_cast<double>(l.width);
  SceneGeometry g{};
  g.center_y = 0.5 * h;
  g.center_x = 0.5 * w;
  g.head = {0.5 * h, 0.5 * w, 0.47 * h, 0.42 * w};
  const Box eyes[2] = {l.left_eye, l.right_eye};
  for (int i = 0; i < 2; ++i) {
    const double bh = static_cast<double>(eyes[i].h), bw = static_cast<double>(eyes[i].w);
    g.sclera[i] = {eyes[i].center_y(), eyes[i].center_x(), 0.4 * bh, 0.4 * bw};
    g.brows[i] = {static_cast<double>(eyes[i].y) - 0.02 * h, eyes[i].center_x(), 0.035 * h,
                  0.35 * bw};
  }
  g.mouth = {0.8 * h, 0.5 * w, 0.035 * h, 0.16 * w};
  g.nose_x0 = 0.48 * w;
  g.nose_x1 = 0.52 * w;
  g.nose_y0 = 0.58 * h;
  g.nose_y1 = 0.70 * h;
  g.pupil_radius = 0.28 * std::min(g.sclera[0].ry, g.sclera[0].rx);
  const double t = std::tan(radians(kMaxGazeDegrees));
  g.gain_x = 0.7 * g.sclera[0].rx / t;
  g.gain_y = 0.7 * g.sclera[0].ry / t;
  return g;
}

/// Pupil displacement (dy, dx) from the sclera centre in unrolled face
/// pixels: positive yaw moves right, positive pitch moves up.
inline std::pair<double, double> pupil_offset(const SceneGeometry& g, const GazeAngles& a) {
  return {-g.gain_y * std::tan(a.pitch), g.gain_x * std::tan(a.yaw)};
}

/// Renders a [3 x h x w] face with 4x4 supersampling.
template <typename T>
Tensor<T> render_scene(const FaceLayout& layout, const SampleRecipe& r,
                       const RenderOptions& options = {}) {
  if (std::abs(r.truth.pitch) > radians(kMaxGazeDegrees) + 1e-12 ||
      std::abs(r.truth.yaw) > radians(kMaxGazeDegrees) + 1e-12) {
    throw ConfigError("gaze angles must lie within +-25 degrees");
  }
  using Rgb = std::array<double, 3>;
  constexpr Rgb kBackground{0.5, 0.5, 0.5}, kSkin{0.85, 0.65, 0.5}, kSclera{0.95, 0.95, 0.92},
      kPupil{0.08, 0.06, 0.05}, kBrow{0.3, 0.2, 0.15}, kNose{0.6, 0.42, 0.32},
      kMouth{0.65, 0.25, 0.25};
  constexpr int kSub = 4;

  const SceneGeometry g = scene_geometry(layout);
  const auto [dy, dx] = pupil_offset(g, r.truth);
  const double cr = std::cos(r.roll), sr = std::sin(r.roll);
  const std::size_t h = layout.height, w = layout.width;

  auto shade = [&](double y, double x) -> Rgb {
    // Undo the roll: sample the upright scene.
    const double py = y - g.center_y, px = x - g.center_x;
    const double sy = g.center_y + cr * py - sr * px;
    const double sx = g.center_x + sr * py + cr * px;
    if (options.pupils) {
      for (const Ellipse& e : g.sclera) {
        const double u = sy - (e.cy + dy), v = sx - (e.cx + dx);
        if (u * u + v * v <= g.pupil_radius * g.pupil_radius) return kPupil;
      }
    }
    for (const Ellipse& e : g.sclera)
      if (e.contains(sy, sx)) return kSclera;
    for (const Ellipse& e : g.brows)
      if (e.contains(sy, sx)) return kBrow;
    if (g.mouth.contains(sy, sx)) return kMouth;
    if (sx >= g.nose_x0 && sx < g.nose_x1 && sy >= g.nose_y0 && sy < g.nose_y1) return kNose;
    if (g.head.contains(sy, sx)) return kSkin;
    return kBackground;
  };

  std::vector<T> px(3 * h * w);
  Rng noise(mix64(r.seed ^ 0x6e6f697365ULL));
  for (std::size_t i = 0; i < h; ++i) {
    for (std::size_t j = 0; j < w; ++j) {
      Rgb acc{0.0, 0.0, 0.0};
      for (int a = 0; a < kSub; ++a) {
        for (int b = 0; b < kSub; ++b) {
          const Rgb c = shade(static_cast<double>(i) + (a + 0.5) / kSub,
                              static_cast<double>(j) + (b + 0.5) / kSub);
          for (int k = 0; k < 3; ++k) acc[k] += c[k];
        }
      }
      for (std::size_t k = 0; k < 3; ++k) {
        double v = r.brightness * acc[k] / (kSub * kSub);
        if (options.noise) v += noise.uniform(-kNoiseAmplitude, kNoiseAmplitude);
        px[(k * h + i) * w + j] = static_cast<T>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return Tensor<T>({3, h, w}, std::move(px));
}

/// Exact copy of box from a [c x h x w] image.
template <typename T>
Tensor<T> crop(const Tensor<T>& image, const Box& box) {
  if (image.rank() != 3 || box.y + box.h > image.dim(1) || box.x + box.w > image.dim(2) ||
      box.h == 0 || box.w == 0) {
    throw DimensionError("crop box outside image " + to_string(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::vector<T> out(c * box.h * box.w);
  auto src = image.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < box.h; ++i)
      std::copy_n(src.begin() + ((k * h + box.y + i) * w + box.x), box.w,
                  out.begin() + (k * box.h + i) * box.w);
  return Tensor<T>({c, box.h, box.w}, std::move(out));
}

/// Both eye boxes cropped and bilinearly resized to the eye extents.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> crop_eyes(const Tensor<T>& face, const FaceLayout& layout,
                                          std::size_t eye_h, std::size_t eye_w) {
  auto one = [&](const Box& box) {
    Tensor<T> c = crop(face, box);
    if (box.h == eye_h && box.w == eye_w) return c;
    NoGradScope<T> no_grad;
    return resize_bilinear(c, eye_h, eye_w);
  };
  return {one(layout.left_eye), one(layout.right_eye)};
}

/// Top band, eye band with both eye boxes zeroed, bottom band.
template <typename T>
std::array<Tensor<T>, 3> region_split(const Tensor<T>& face, const FaceLayout& layout) {
  Tensor<T> top = crop(face, layout.top_region());
  Tensor<T> mid = crop(face, layout.mid_region());
  Tensor<T> bot = crop(face, layout.bottom_region());
  const std::size_t c = mid.dim(0), h = mid.dim(1), w = mid.dim(2);
  auto m = mid.mutable_data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) {
        const std::size_t row = layout.band_top + i;
        if (layout.left_eye.contains(row, j) || layout.right_eye.contains(row, j)) {
          m[(k * h + i) * w + j] = T(0);
        }
      }
  return {top, mid, bot};
}

template <typename T>
struct GazeSample {
  Tensor<T> face;  // [3 x H x W] in [0, 1]
  Tensor<T> eye_left, eye_right;
  Tensor<T> region_top, region_mid, region_bot;
  GazeAngles truth;
  SampleRecipe recipe;
};

template <typename T>
GazeSample<T> make_sample(const FaceLayout& layout, std::size_t eye_h, std::size_t eye_w,
                          const SampleRecipe& recipe) {
  GazeSample<T> s;
  s.face = render_scene<T>(layout, recipe);
  std::tie(s.eye_left, s.eye_right) = crop_eyes(s.face, layout, eye_h, eye_w);
  auto regions = region_split(s.face, layout);
  s.region_top = regions[0];
  s.region_mid = regions[1];
  s.region_bot = regions[2];
  s.truth = recipe.truth;
  s.recipe = recipe;
  return s;
}

/// Parameters of a generated dataset; enough to regenerate it bitwise.
struct DatasetSpec {
  std::uint64_t seed = 7;
  std::size_t count = 2500;
  double split_ratio = 0.8;
  std::size_t face_height = 64, face_width = 64;
  std::size_t eye_height = 24, eye_width = 40;

  std::size_t train_count() const {
    return static_cast<std::size_t>(std::llround(static_cast<double>(count) * split_ratio));
  }
};

/// Per-sample seed i of a dataset; distinct for distinct i.
inline std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  return mix64(mix64(dataset_seed) + index);
}

inline SampleRecipe sample_recipe(std::uint64_t seed) {
  Rng rng(seed);
  SampleRecipe r;
  r.seed = seed;
  r.truth.pitch = radians(rng.uniform(-kMaxGazeDegrees, kMaxGazeDegrees));
  r.truth.yaw = radians(rng.uniform(-kMaxGazeDegrees, kMaxGazeDegrees));
  r.brightness = rng.uniform(0.7, 1.3);
  r.roll = radians(rng.uniform(-kMaxRollDegrees, kMaxRollDegrees));
  return r;
}

/// Recipes for all samples, train split first.
inline std::vector<SampleRecipe> dataset_recipes(const DatasetSpec& spec) {
  std::vector<SampleRecipe> out;
  out.reserve(spec.count);
  for (std::size_t i = 0; i < spec.count; ++i) out.push_back(sample_recipe(sample_seed(spec.seed, i)));
  return out;
}

template <typename T>
struct Dataset {
  DatasetSpec spec;
  std::vector<GazeSample<T>> train;
  std::vector<GazeSample<T>> test;
};

template <typename T>
Dataset<T> dataset_generate(const DatasetSpec& spec) {
  if (spec.count == 0) throw ConfigError("dataset count must be positive");
  if (!(spec.split_ratio >= 0.0 && spec.split_ratio <= 1.0)) {
    throw ConfigError("split ratio must lie in [0, 1]");
  }
  const FaceLayout layout = face_layout(spec.face_height, spec.face_width);
  Dataset<T> d;
  d.spec = spec;
  const auto recipes = dataset_recipes(spec);
  const std::size_t n_train = spec.train_count();
  for (std::size_t i = 0; i < recipes.size(); ++i) {
    auto s = make_sample<T>(layout, spec.eye_height, spec.eye_width, recipes[i]);
    (i < n_train ? d.train : d.test).push_back(std::move(s));
  }
  return d;
}

}  // namespace dualgaze
