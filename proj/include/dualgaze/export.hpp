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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dualgaze/attention.hpp"
#include "dualgaze/config.hpp"
#include "dualgaze/errors.hpp"
#include "dualgaze/image_io.hpp"
#include "dualgaze/losses.hpp"
#include "dualgaze/model.hpp"
#include "dualgaze/synth.hpp"
#include "dualgaze/train.hpp"

namespace dualgaze {

// ---------------------------------------------------------------------------
// Dataset directories.
//
//   <dir>/dataset.cfg          generation parameters (regenerates the data)
//   <dir>/{train,test}/manifest.csv
//   <dir>/{train,test}/<id>_face.ppm, <id>_eye_left.ppm, <id>_eye_right.ppm

inline constexpr const char* kManifestHeader =
    "id,seed,pitch_deg,yaw_deg,brightness,roll_deg,left_eye_y,left_eye_x,left_eye_h,"
    "left_eye_w,right_eye_y,right_eye_x,right_eye_h,right_eye_w";

inline std::string dataset_spec_text(const DatasetSpec& s) {
  std::ostringstream os;
  os << "format_version = 1\n"
     << "seed = " << s.seed << '\n'
     << "count = " << s.count << '\n'
     << "split_ratio = " << detail::format_double(s.split_ratio) << '\n'
     << "face_height = " << s.face_height << '\n'
     << "face_width = " << s.face_width << '\n'
     << "eye_height = " << s.eye_height << '\n'
     << "eye_width = " << s.eye_width << '\n';
  return os.str();
}

inline DatasetSpec parse_dataset_spec(const std::string& text) {
  DatasetSpec s;
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const std::string body = detail::trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError("dataset.cfg: expected key = value");
    kv[detail::trim(body.substr(0, eq))] = detail::trim(body.substr(eq + 1));
  }
  auto take = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("dataset.cfg lacks " + key);
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  if (detail::parse_number<int>("format_version", take("format_version")) != 1) {
    throw ConfigError("unsupported dataset.cfg format_version");
  }
  s.seed = detail::parse_number<std::uint64_t>("seed", take("seed"));
  s.count = detail::parse_number<std::size_t>("count", take("count"));
  s.split_ratio = detail::parse_number<double>("split_ratio", take("split_ratio"));
  s.face_height = detail::parse_number<std::size_t>("face_height", take("face_height"));
  s.face_width = detail::parse_number<std::size_t>("face_width", take("face_width"));
  s.eye_height = detail::parse_number<std::size_t>("eye_height", take("eye_height"));
  s.eye_width = detail::parse_number<std::size_t>("eye_width", take("eye_width"));
  if (!kv.empty()) throw ConfigError("dataset.cfg has unknown key " + kv.begin()->first);
  return s;
}

namespace detail {
inline std::string manifest_row(std::size_t id, const SampleRecipe& r, const FaceLayout& l) {
  std::ostringstream os;
  os << id << ',' << r.seed << std::fixed << std::setprecision(6) << ','
     << degrees(r.truth.pitch) << ',' << degrees(r.truth.yaw) << ',' << r.brightness << ','
     << degrees(r.roll) << ',' << l.left_eye.y << ',' << l.left_eye.x << ',' << l.left_eye.h
     << ',' << l.left_eye.w << ',' << l.right_eye.y << ',' << l.right_eye.x << ','
     << l.right_eye.h << ',' << l.right_eye.w;
  return os.str();
}

inline std::string sample_stem(std::size_t id) {
  std::ostringstream os;
  os << std::setw(5) << std::setfill('0') << id;
  return os.str();
}
}  // namespace detail

/// Renders the dataset and writes images, manifests and dataset.cfg.
template <typename T>
void write_dataset(const std::string& dir, const Dataset<T>& d) {
  namespace fs = std::filesystem;
  const FaceLayout layout = face_layout(d.spec.face_height, d.spec.face_width);
  fs::create_directories(dir);
  std::size_t id = 0;
  for (const auto* split : {&d.train, &d.test}) {
    const fs::path sub = fs::path(dir) / (split == &d.train ? "train" : "test");
    fs::create_directories(sub);
    std::ofstream manifest(sub / "manifest.csv");
    if (!manifest) throw UsageError("cannot write " + (sub / "manifest.csv").string());
    manifest << kManifestHeader << '\n';
    for (const auto& s : *split) {
      const std::string stem = detail::sample_stem(id);
      write_pnm((sub / (stem + "_face.ppm")).string(), to_image8(s.face));
      write_pnm((sub / (stem + "_eye_left.ppm")).string(), to_image8(s.eye_left));
      write_pnm((sub / (stem + "_eye_right.ppm")).string(), to_image8(s.eye_right));
      manifest << detail::manifest_row(id, s.recipe, layout) << '\n';
      ++id;
    }
  }
  std::ofstream cfg(fs::path(dir) / "dataset.cfg");
  cfg << dataset_spec_text(d.spec);
}

/// Regenerates the dataset described by <dir>/dataset.cfg at full
/// precision and checks it against the manifests.
template <typename T>
Dataset<T> load_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  std::ifstream cfg(fs::path(dir) / "dataset.cfg");
  if (!cfg) throw UsageError("no dataset.cfg in " + dir);
  std::stringstream ss;
  ss << cfg.rdbuf();
  const DatasetSpec spec = parse_dataset_spec(ss.str());
  Dataset<T> d = dataset_generate<T>(spec);
  const FaceLayout layout = face_layout(spec.face_height, spec.face_width);
  std::size_t id = 0;
  for (const auto* split : {&d.train, &d.test}) {
    const fs::path path = fs::path(dir) / (split == &d.train ? "train" : "test") / "manifest.csv";
    std::ifstream manifest(path);
    if (!manifest) throw IntegrityError("missing " + path.string());
    std::string line;
    std::getline(manifest, line);
    for (const auto& s : *split) {
      if (!std::getline(manifest, line) || line != detail::manifest_row(id, s.recipe, layout)) {
        throw IntegrityError(path.string() + " disagrees with dataset.cfg at sample " +
                             std::to_string(id));
      }
      ++id;
    }
    if (std::getline(manifest, line) && !line.empty()) {
      throw IntegrityError(path.string() + " has more rows than dataset.cfg describes");
    }
  }
  return d;
}

// ---------------------------------------------------------------------------
// Attention maps.

struct AttentionDump {
  // Channel means of mask and 1 - mask, before normalization, [h x w].
  Tensor<double> mask_upper, mask_lower;
  std::vector<std::string> files;
};

/// Runs one sample through the model and writes the disentangler mask of
/// both branches and every CBAM spatial map as min-max normalized PGM
/// heatmaps, enlarged to roughly the face size, plus the input face.
template <typename T>
AttentionDump dump_attention(GazeModel<T>& model, const GazeSample<T>& sample,
                             const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  AttentionRecorder<T> recorder;
  model.attach_recorder(&recorder);
  ForwardOutput<T> out;
  try {
    NoGradScope<T> no_grad;
    auto add_batch = [](const Tensor<T>& t) {
      Shape s{1};
      s.insert(s.end(), t.shape().begin(), t.shape().end());
      return reshape(t, s);
    };
    out = model.forward(add_batch(sample.face), add_batch(sample.eye_left),
                        add_batch(sample.eye_right));
  } catch (...) {
    model.attach_recorder(nullptr);
    throw;
  }
  model.attach_recorder(nullptr);

  const Tensor<T>& mask = out.disentangled.mask;
  const std::size_t c = mask.dim(0), h = mask.dim(1), w = mask.dim(2);
  AttentionDump dump;
  dump.mask_upper = Tensor<double>({h, w});
  dump.mask_lower = Tensor<double>({h, w});
  auto up = dump.mask_upper.mutable_data();
  auto lo = dump.mask_lower.mutable_data();
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < h * w; ++p) {
      const double k = static_cast<double>(mask[ch * h * w + p]);
      up[p] += k / static_cast<double>(c);
      lo[p] += (1.0 - k) / static_cast<double>(c);
    }

  const std::size_t upscale = std::max<std::size_t>(1, sample.face.dim(1) / h);
  auto emit = [&](const std::string& name, const Image8& img) {
    const std::string path = (fs::path(out_dir) / name).string();
    write_pnm(path, img);
    dump.files.push_back(path);
  };
  emit("face.ppm", to_image8(sample.face));
  emit("mask_upper.pgm", heatmap_image(dump.mask_upper, upscale));
  emit("mask_lower.pgm", heatmap_image(dump.mask_lower, upscale));
  for (const auto& [tag, map] : recorder.maps()) {
    if (!tag.ends_with("/cbam/spatial")) continue;
    std::string name = tag.substr(0, tag.size() - std::string("/cbam/spatial").size());
    std::replace(name.begin(), name.end(), '/', '_');
    const Tensor<T> plane = reshape(map, {map.dim(2), map.dim(3)});
    emit(name + "_spatial.pgm", heatmap_image(plane, std::max<std::size_t>(1, sample.face.dim(1) / plane.dim(0))));
  }
  return dump;
}

}  // namespace dualgaze
