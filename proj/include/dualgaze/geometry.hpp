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

#include <cstddef>
#include <string>

#include "dualgaze/errors.hpp"

namespace dualgaze {

/// Axis-aligned pixel rectangle [y, y + h) x [x, x + w).
struct Box {
  std::size_t y = 0, x = 0, h = 0, w = 0;

  bool contains(std::size_t row, std::size_t col) const {
    return row >= y && row < y + h && col >= x && col < x + w;
  }
  double center_y() const { return static_cast<double>(y) + 0.5 * static_cast<double>(h); }
  double center_x() const { return static_cast<double>(x) + 0.5 * static_cast<double>(w); }
  bool operator==(const Box&) const = default;
};

/// Where the eyes and the three reconstruction bands sit on a face image.
///
/// Both eye boxes span the same rows, so the eye band is simply
/// [band_top, band_bottom). "left" is the box on the image's left side.
struct FaceLayout {
  std::size_t height = 0, width = 0;
  Box left_eye, right_eye;
  std::size_t band_top = 0, band_bottom = 0;

  Box top_region() const { return {0, 0, band_top, width}; }
  Box mid_region() const { return {band_top, 0, band_bottom - band_top, width}; }
  Box bottom_region() const { return {band_bottom, 0, height - band_bottom, width}; }
};

/// Eye boxes as fixed fractions of the face: height H/4 and width 3W/8,
/// starting 5H/16 from the top and 3W/32 in from either side.
inline FaceLayout face_layout(std::size_t height, std::size_t width) {
  if (height < 16 || width < 32) {
    throw ConfigError("face extents " + std::to_string(height) + "x" +
                      std::to_string(width) + " are too small for the eye layout");
  }
  FaceLayout l;
  l.height = height;
  l.width = width;
  const std::size_t box_h = height / 4, box_w = 3 * width / 8;
  const std::size_t y = 5 * height / 16, inset = 3 * width / 32;
  l.left_eye = {y, inset, box_h, box_w};
  l.right_eye = {y, width - inset - box_w, box_h, box_w};
  l.band_top = y;
  l.band_bottom = y + box_h;
  return l;
}

}  // namespace dualgaze
