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
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "dualgaze/attention.hpp"
#include "dualgaze/errors.hpp"
#include "dualgaze/geometry.hpp"
#include "dualgaze/nn.hpp"
#include "dualgaze/ops.hpp"
#include "dualgaze/random.hpp"
#include "dualgaze/tensor.hpp"

namespace dualgaze {

/// Architecture and loss-weight settings. Defaults are the desk-scale model.
struct ModelConfig {
  std::size_t face_height = 64;
  std::size_t face_width = 64;
  std::size_t eye_height = 24;
  std::size_t eye_width = 40;
  // Each entry is one 3x3 stride-2 conv + ReLU.
  std::vector<std::size_t> face_channels{16, 32, 64, 64};
  std::vector<std::size_t> eye_channels{16, 32, 32};
  std::vector<std::size_t> pose_channels{8, 16, 32};
  std::size_t pose_dim = 32;
  std::size_t gaze_hidden = 128;
  // Each entry is one 4x4 stride-2 transposed conv + ReLU in a decoder trunk.
  std::vector<std::size_t> decoder_channels{32, 16, 8};
  std::size_t groups = 4;
  std::size_t rounds = 4;
  double sigma = 1.0;
  bool learnable_sigma = false;
  std::size_t cbam_reduction = 4;
  double lambda_eye = 1.0;
  double lambda_region = 1.0;

  bool operator==(const ModelConfig&) const = default;

  static std::size_t halve(std::size_t extent, std::size_t times) {
    for (std::size_t i = 0; i < times; ++i) extent = (extent + 1) / 2;
    return extent;
  }

  /// (c, h, w) of the face features entering the disentangler.
  Shape feature_shape() const {
    return {face_channels.back(), halve(face_height, face_channels.size()),
            halve(face_width, face_channels.size())};
  }

  std::size_t per_eye_feature_dim() const {
    return eye_channels.back() * halve(eye_height, eye_channels.size()) *
           halve(eye_width, eye_channels.size());
  }

  /// Length of the concatenated two-eye feature vector.
  std::size_t eye_feature_dim() const { return 2 * per_eye_feature_dim(); }

  FaceLayout layout() const { return face_layout(face_height, face_width); }

  void validate() const {
    auto positive = [](std::size_t v, const char* what) {
      if (v == 0) throw ConfigError(std::string(what) + " must be positive");
    };
    auto ladder = [&](const std::vector<std::size_t>& l, const char* what) {
      if (l.empty()) throw ConfigError(std::string(what) + " needs at least one stage");
      for (std::size_t v : l) positive(v, what);
    };
    positive(face_height, "face_height");
    positive(face_width, "face_width");
    positive(eye_height, "eye_height");
    positive(eye_width, "eye_width");
    ladder(face_channels, "face_channels");
    ladder(eye_channels, "eye_channels");
    ladder(pose_channels, "pose_channels");
    ladder(decoder_channels, "decoder_channels");
    positive(pose_dim, "pose_dim");
    positive(gaze_hidden, "gaze_hidden");
    positive(groups, "groups");
    positive(rounds, "rounds");
    positive(cbam_reduction, "cbam_reduction");
    if (face_channels.back() % groups != 0) {
      throw ConfigError("feature channels " + std::to_string(face_channels.back()) +
                        " not divisible by groups " + std::to_string(groups));
    }
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (!(lambda_eye >= 0.0) || !(lambda_region >= 0.0)) {
      throw ConfigError("loss weights must be non-negative");
    }
    (void)layout();
  }
};

template <typename T>
struct DisentangledFeatures {
  Tensor<T> mask;  // [c x h x w], sigmoid of the free mask logits
  Tensor<T> face_features;
  Tensor<T> relevant;
  Tensor<T> irrelevant;
};

template <typename T>
struct ForwardOutput {
  Tensor<T> gaze;  // [b x 2], (pitch, yaw) in radians
  Tensor<T> recon_left, recon_right;
  Tensor<T> recon_top, recon_mid, recon_bot;
  DisentangledFeatures<T> disentangled;
  Tensor<T> upper_attended, lower_attended;
  Tensor<T> eye_features, pose_features;
};

// ---------------------------------------------------------------------------

/// Chain of 3x3 stride-2 convs, each followed by ReLU.
template <typename T>
class ConvStack {
 public:
  ConvStack() = default;
  ConvStack(std::size_t c_in, const std::vector<std::size_t>& ladder, Rng& rng) {
    for (std::size_t c : ladder) {
      layers.emplace_back(c_in, c, 3, 2, 1, rng);
      c_in = c;
    }
  }

  Tensor<T> operator()(Tensor<T> x) const {
    for (const auto& layer : layers) x = relu(layer(x));
    return x;
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].collect(out, prefix + ".conv" + std::to_string(i));
    }
  }

  std::vector<Conv2d<T>> layers;
};

/// One conv stack shared by both eyes; features are flattened and
/// concatenated left then right.
template <typename T>
class EyeEncoder {
 public:
  EyeEncoder() = default;
  EyeEncoder(const ModelConfig& cfg, Rng& rng) : stack(3, cfg.eye_channels, rng) {}

  Tensor<T> operator()(const Tensor<T>& left, const Tensor<T>& right) const {
    const std::size_t b = left.dim(0);
    const Tensor<T> both = flatten(stack(concat<T>({left, right}, 0)));
    return concat<T>({slice(both, 0, 0, b), slice(both, 0, b, b)}, 1);
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    stack.collect(out, prefix);
  }

  ConvStack<T> stack;
};

/// Three stride-2 convs, global average pool, linear projection.
template <typename T>
class HeadPoseBranch {
 public:
  HeadPoseBranch() = default;
  HeadPoseBranch(const ModelConfig& cfg, Rng& rng)
      : stack(3, cfg.pose_channels, rng), project(cfg.pose_channels.back(), cfg.pose_dim, rng) {}

  Tensor<T> operator()(const Tensor<T>& face) const {
    const Tensor<T> f = stack(face);
    return project(reshape(global_avg_pool(f), {f.dim(0), f.dim(1)}));
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    stack.collect(out, prefix);
    project.collect(out, prefix + ".project");
  }

  ConvStack<T> stack;
  Linear<T> project;
};

/// Continuous mask over the face features: relevant = k * F,
/// irrelevant = (1 - k) * F with k = sigmoid(M) and M a free parameter
/// initialized to zero.
template <typename T>
class Disentangler {
 public:
  Disentangler() = default;
  explicit Disentangler(const Shape& feature_shape)
      : mask_logits(make_parameter<T>(feature_shape)) {}

  Tensor<T> mask() const { return sigmoid(mask_logits); }

  DisentangledFeatures<T> operator()(const Tensor<T>& f) const {
    DisentangledFeatures<T> d;
    d.mask = mask();
    d.face_features = f;
    std::tie(d.relevant, d.irrelevant) = complementary_split(f, d.mask);
    return d;
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".mask_logits", mask_logits});
  }

  Tensor<T> mask_logits;
};

/// Upsampling trunk shared by several heads. Each head crops the trunk
/// output at its target's face-relative box, applies a 3x3 conv to three
/// channels, resizes to the target extents and squashes with a sigmoid.
template <typename T>
class ReconstructionDecoder {
 public:
  struct Target {
    Box box;  // in face pixels
    std::size_t height, width;
  };

  ReconstructionDecoder() = default;
  ReconstructionDecoder(const ModelConfig& cfg, std::vector<Target> targets, Rng& rng)
      : targets_(std::move(targets)), face_h_(cfg.face_height), face_w_(cfg.face_width) {
    std::size_t c = cfg.face_channels.back();
    for (std::size_t next : cfg.decoder_channels) {
      trunk.emplace_back(c, next, 4, 2, 1, rng);
      c = next;
    }
    for (std::size_t i = 0; i < targets_.size(); ++i) heads.emplace_back(c, 3, 3, 1, 1, rng);
  }

  std::vector<Tensor<T>> operator()(const Tensor<T>& features) const {
    Tensor<T> x = features;
    for (const auto& layer : trunk) x = relu(layer(x));
    std::vector<Tensor<T>> outputs;
    for (std::size_t i = 0; i < targets_.size(); ++i) {
      const auto [y0, y1] = span_on(targets_[i].box.y, targets_[i].box.h, face_h_, x.dim(2));
      const auto [x0, x1] = span_on(targets_[i].box.x, targets_[i].box.w, face_w_, x.dim(3));
      const Tensor<T> crop = slice(slice(x, 2, y0, y1 - y0), 3, x0, x1 - x0);
      outputs.push_back(sigmoid(
          resize_bilinear(heads[i](crop), targets_[i].height, targets_[i].width)));
    }
    return outputs;
  }

  const std::vector<Target>& targets() const { return targets_; }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < trunk.size(); ++i) {
      trunk[i].collect(out, prefix + ".trunk" + std::to_string(i));
    }
    for (std::size_t i = 0; i < heads.size(); ++i) {
      heads[i].collect(out, prefix + ".head" + std::to_string(i));
    }
  }

  std::vector<ConvTranspose2d<T>> trunk;
  std::vector<Conv2d<T>> heads;

 private:
  // [start, end) on a grid of `grid` cells covering `extent` face pixels;
  // never empty.
  static std::pair<std::size_t, std::size_t> span_on(std::size_t start, std::size_t len,
                                                     std::size_t extent, std::size_t grid) {
    const double s = static_cast<double>(grid) / static_cast<double>(extent);
    std::size_t lo = static_cast<std::size_t>(std::floor(static_cast<double>(start) * s));
    std::size_t hi = static_cast<std::size_t>(std::ceil(static_cast<double>(start + len) * s));
    lo = std::min(lo, grid - 1);
    hi = std::clamp(hi, lo + 1, grid);
    return {lo, hi};
  }

  std::vector<Target> targets_;
  std::size_t face_h_ = 0, face_w_ = 0;
};

/// Pooled attended face features, eye features and pose features through a
/// two-layer MLP to (pitch, yaw).
template <typename T>
class GazeHead {
 public:
  GazeHead() = default;
  GazeHead(const ModelConfig& cfg, Rng& rng)
      : mlp(input_dim(cfg), cfg.gaze_hidden, 2, rng) {}

  static std::size_t input_dim(const ModelConfig& cfg) {
    return cfg.face_channels.back() + cfg.eye_feature_dim() + cfg.pose_dim;
  }

  Tensor<T> operator()(const Tensor<T>& attended, const Tensor<T>& eye_features,
                       const Tensor<T>& pose) const {
    const Tensor<T> pooled = reshape(global_avg_pool(attended), {attended.dim(0), attended.dim(1)});
    return mlp(concat<T>({pooled, eye_features, pose}, 1));
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    mlp.collect(out, prefix + ".mlp");
  }

  Mlp<T> mlp;
};

// ---------------------------------------------------------------------------

/// The full two-branch gaze model.
///
/// Face features are split by the disentangler; the gaze-relevant part runs
/// through the upper cascaded attention block, which feeds the eye decoder
/// and the gaze head, and the irrelevant part runs through the lower block,
/// which feeds the region decoder.
template <typename T>
class GazeModel {
 public:
  GazeModel(const ModelConfig& cfg, std::uint64_t seed) : config_(cfg) {
    cfg.validate();
    Rng rng(mix64(seed));
    const FaceLayout l = cfg.layout();
    eye_encoder = EyeEncoder<T>(cfg, rng);
    face_encoder = ConvStack<T>(3, cfg.face_channels, rng);
    head_pose = HeadPoseBranch<T>(cfg, rng);
    disentangler = Disentangler<T>(cfg.feature_shape());
    typename CascadedAttentionBlock<T>::Settings s;
    s.channels = cfg.face_channels.back();
    s.groups = cfg.groups;
    s.rounds = cfg.rounds;
    s.sigma = cfg.sigma;
    s.learnable_sigma = cfg.learnable_sigma;
    s.cbam_reduction = cfg.cbam_reduction;
    upper_attention = CascadedAttentionBlock<T>(s, rng);
    lower_attention = CascadedAttentionBlock<T>(s, rng);
    using Target = typename ReconstructionDecoder<T>::Target;
    eye_decoder = ReconstructionDecoder<T>(
        cfg,
        {Target{l.left_eye, cfg.eye_height, cfg.eye_width},
         Target{l.right_eye, cfg.eye_height, cfg.eye_width}},
        rng);
    const Box top = l.top_region(), mid = l.mid_region(), bot = l.bottom_region();
    region_decoder = ReconstructionDecoder<T>(
        cfg, {Target{top, top.h, top.w}, Target{mid, mid.h, mid.w}, Target{bot, bot.h, bot.w}},
        rng);
    gaze_head = GazeHead<T>(cfg, rng);
  }

  const ModelConfig& config() const { return config_; }

  ForwardOutput<T> forward(const Tensor<T>& face, const Tensor<T>& eye_left,
                           const Tensor<T>& eye_right) const {
    check_inputs(face, eye_left, eye_right);
    ForwardOutput<T> out;
    out.eye_features = eye_encoder(eye_left, eye_right);
    out.disentangled = disentangler(face_encoder(face));
    out.upper_attended = upper_attention(out.disentangled.relevant);
    out.lower_attended = lower_attention(out.disentangled.irrelevant);
    auto eyes = eye_decoder(out.upper_attended);
    out.recon_left = eyes[0];
    out.recon_right = eyes[1];
    auto regions = region_decoder(out.lower_attended);
    out.recon_top = regions[0];
    out.recon_mid = regions[1];
    out.recon_bot = regions[2];
    out.pose_features = head_pose(face);
    out.gaze = gaze_head(out.upper_attended, out.eye_features, out.pose_features);
    return out;
  }

  /// Gaze prediction alone; skips the lower branch and both decoders.
  Tensor<T> predict_gaze(const Tensor<T>& face, const Tensor<T>& eye_left,
                         const Tensor<T>& eye_right) const {
    check_inputs(face, eye_left, eye_right);
    const auto d = disentangler(face_encoder(face));
    return gaze_head(upper_attention(d.relevant), eye_encoder(eye_left, eye_right),
                     head_pose(face));
  }

  ParameterList<T> parameters() const {
    ParameterList<T> out;
    eye_encoder.collect(out, "eye_encoder");
    face_encoder.collect(out, "face_encoder");
    head_pose.collect(out, "head_pose");
    disentangler.collect(out, "disentangler");
    upper_attention.collect(out, "upper_attention");
    lower_attention.collect(out, "lower_attention");
    eye_decoder.collect(out, "eye_decoder");
    region_decoder.collect(out, "region_decoder");
    gaze_head.collect(out, "gaze_head");
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.tensor.size();
    return n;
  }

  /// Routes attention maps of both branches to recorder (null detaches).
  void attach_recorder(AttentionRecorder<T>* recorder) {
    upper_attention.attach(recorder, "upper");
    lower_attention.attach(recorder, "lower");
  }

  EyeEncoder<T> eye_encoder;
  ConvStack<T> face_encoder;
  HeadPoseBranch<T> head_pose;
  Disentangler<T> disentangler;
  CascadedAttentionBlock<T> upper_attention;
  CascadedAttentionBlock<T> lower_attention;
  ReconstructionDecoder<T> eye_decoder;
  ReconstructionDecoder<T> region_decoder;
  GazeHead<T> gaze_head;

 private:
  void check_inputs(const Tensor<T>& face, const Tensor<T>& eye_left,
                    const Tensor<T>& eye_right) const {
    const Shape face_want{3, config_.face_height, config_.face_width};
    const Shape eye_want{3, config_.eye_height, config_.eye_width};
    auto check = [](const Tensor<T>& t, const Shape& want, std::size_t batch, const char* what) {
      const bool ok = t.defined() && t.rank() == 4 && t.dim(0) == batch &&
                      std::equal(want.begin(), want.end(), t.shape().begin() + 1);
      if (!ok) {
        throw DimensionError(std::string(what) + " must be [" + std::to_string(batch) + "x" +
                             to_string(want).substr(1) + ", got " +
                             (t.defined() ? to_string(t.shape()) : std::string("<undefined>")));
      }
    };
    if (!face.defined() || face.rank() != 4) {
      throw DimensionError("face batch must be [b x 3 x h x w]");
    }
    check(face, face_want, face.dim(0), "face batch");
    check(eye_left, eye_want, face.dim(0), "left eye batch");
    check(eye_right, eye_want, face.dim(0), "right eye batch");
  }

  ModelConfig config_;
};

}  // namespace dualgaze
