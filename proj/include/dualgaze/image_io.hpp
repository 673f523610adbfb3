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
#include <fstream>
#include <string>
#include <vector>

#include "dualgaze/errors.hpp"
#include "dualgaze/tensor.hpp"

namespace dualgaze {

/// 8-bit image in interleaved channel order, as stored in PGM/PPM files.
struct Image8 {
  std::size_t channels = 1, height = 0, width = 0;
  std::vector<std::uint8_t> pixels;
};

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Planar [c x h x w] tensor with values in [0, 1] (c = 1 or 3) to 8 bits.
template <typename T>
Image8 to_image8(const Tensor<T>& t) {
  if (t.rank() != 3 || (t.dim(0) != 1 && t.dim(0) != 3)) {
    throw DimensionError("image tensor must be [1|3 x h x w], got " + to_string(t.shape()));
  }
  Image8 img{t.dim(0), t.dim(1), t.dim(2), {}};
  const std::size_t plane = img.height * img.width;
  img.pixels.resize(img.channels * plane);
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t c = 0; c < img.channels; ++c)
      img.pixels[p * img.channels + c] = to_byte(static_cast<double>(t[c * plane + p]));
  return img;
}

/// Binary PGM (one channel) or PPM (three channels).
inline void write_pnm(const std::string& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw UsageError("PNM images have 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path);
  out << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.pixels.data()),
            static_cast<std::streamsize>(img.pixels.size()));
  if (!out) throw UsageError("failed writing " + path);
}

inline Image8 read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if ((magic != "P5" && magic != "P6") || maxval != 255 || w == 0 || h == 0) {
    throw IntegrityError(path + " is not an 8-bit binary PGM/PPM");
  }
  in.get();
  Image8 img{magic == "P5" ? 1u : 3u, h, w, {}};
  img.pixels.resize(img.channels * h * w);
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!in) throw IntegrityError(path + " is truncated");
  return img;
}

/// Min-max normalization of a [h x w] map to a full-range 8-bit PGM image,
/// optionally enlarged by pixel replication. A constant map becomes black.
template <typename T>
Image8 heatmap_image(const Tensor<T>& map, std::size_t upscale = 1) {
  if (map.rank() != 2) throw DimensionError("heatmap must be [h x w], got " + to_string(map.shape()));
  const auto [lo_it, hi_it] = std::minmax_element(map.data().begin(), map.data().end());
  const double lo = *lo_it, range = static_cast<double>(*hi_it) - lo;
  const std::size_t h = map.dim(0), w = map.dim(1);
  Image8 img{1, h * upscale, w * upscale, {}};
  img.pixels.resize(img.height * img.width);
  for (std::size_t i = 0; i < img.height; ++i)
    for (std::size_t j = 0; j < img.width; ++j) {
      const double v = map[(i / upscale) * w + j / upscale];
      img.pixels[i * img.width + j] = range > 0.0 ? to_byte((v - lo) / range) : 0;
    }
  return img;
}

}  // namespace dualgaze
