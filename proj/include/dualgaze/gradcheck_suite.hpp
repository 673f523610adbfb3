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

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dualgaze/attention.hpp"
#include "dualgaze/gradcheck.hpp"
#include "dualgaze/losses.hpp"
#include "dualgaze/model.hpp"
#include "dualgaze/nn.hpp"
#include "dualgaze/ops.hpp"
#include "dualgaze/random.hpp"

namespace dualgaze {

/// Smallest configuration that still exercises every part of the model:
/// 8 x 4 x 4 features, two groups, two rounds.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.face_height = 32;
  c.face_width = 32;
  c.eye_height = 8;
  c.eye_width = 12;
  c.face_channels = {4, 8, 8};
  c.eye_channels = {4, 4};
  c.pose_channels = {4, 4, 4};
  c.pose_dim = 4;
  c.gaze_hidden = 8;
  c.decoder_channels = {4, 4};
  c.groups = 2;
  c.rounds = 2;
  return c;
}

/// A named finite-difference check at 64-bit precision.
struct GradCheckCase {
  std::string name;
  double tolerance;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

namespace detail {

inline Tensor<double> gc_random(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

// Scalar probe with fixed random weights per output coordinate.
struct Probe {
  std::vector<Tensor<double>> weights;
  Tensor<double> operator()(const std::vector<Tensor<double>>& outputs) {
    if (weights.empty()) {
      Rng rng(0x70726f6265ULL);
      for (const auto& o : outputs) weights.push_back(gc_random(o.shape(), rng));
    }
    Tensor<double> total = sum(mul(outputs[0], weights[0]));
    for (std::size_t i = 1; i < outputs.size(); ++i) {
      total = add(total, sum(mul(outputs[i], weights[i])));
    }
    return total;
  }
};

inline bool is_bias(const std::string& name) {
  return name.size() >= 5 && name.compare(name.size() - 5, 5, ".bias") == 0;
}

// Biases start at zero, which puts a ReLU fed by an all-zero window exactly on
// its kink; they get small random values first.
template <typename Module>
void append_parameters(const Module& m, std::vector<Tensor<double>>& wrt,
                       std::vector<std::string>& names, Rng& rng) {
  ParameterList<double> list;
  m.collect(list, "p");
  for (auto& p : list) {
    if (is_bias(p.name)) {
      for (double& v : p.tensor.mutable_data()) v = rng.uniform(-0.1, 0.1);
    }
    wrt.push_back(p.tensor);
    names.push_back(p.name);
  }
}

// Small, kink-robust steps for functions built from ReLU, max or abs.
inline GradCheckOptions kinked(std::uint64_t seed, std::size_t max_coords = 0) {
  return {1e-6, max_coords, seed, true};
}

}  // namespace detail

inline std::vector<GradCheckCase> gradcheck_suite() {
  using Td = Tensor<double>;
  using detail::gc_random;
  std::vector<GradCheckCase> cases;

  cases.push_back({"elementwise", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    std::vector<Td> wrt{gc_random({2, 3, 2, 2}, rng), gc_random({2, 3, 1, 1}, rng, 0.5, 1.5)};
    detail::Probe probe;
    auto f = [&] {
      const Td& a = wrt[0];
      const Td& b = wrt[1];
      const Td e = exp(scale(sub(sigmoid(mul(a, b)), neg(a)), 0.5));
      return probe({add(div(e, b), square(a)), reciprocal(add_scalar(b, 1.0))});
    };
    return finite_diff_check<double>(f, wrt, {1e-4, 0, seed}, {"a", "b"});
  }});

  cases.push_back({"matmul_softmax", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    std::vector<Td> wrt{gc_random({2, 3, 4}, rng), gc_random({2, 4, 5}, rng)};
    detail::Probe probe;
    auto f = [&] {
      const Td p = matmul(wrt[0], wrt[1]);
      return probe({p, softmax(p, 2), softmax(p, 1)});
    };
    return finite_diff_check<double>(f, wrt, {1e-4, 0, seed}, {"a", "b"});
  }});

  cases.push_back({"pairwise_distances", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    std::vector<Td> wrt{gc_random({2, 3, 4}, rng), gc_random({2, 3, 5}, rng)};
    detail::Probe probe;
    auto f = [&] {
      return probe({pairwise_sq_distances(wrt[0], wrt[1]), pairwise_sq_distances(wrt[0], wrt[0])});
    };
    return finite_diff_check<double>(f, wrt, {1e-4, 0, seed}, {"q", "k"});
  }});

  cases.push_back({"shape_ops", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    std::vector<Td> wrt{gc_random({2, 4, 3, 3}, rng)};
    detail::Probe probe;
    auto f = [&] {
      const auto g = group_split(wrt[0], 2);
      const Td c = concat<double>({g[1], g[0]}, 1);
      return probe({transpose(reshape(slice(c, 3, 1, 2), {2, 12, 2})), flatten(c)});
    };
    return finite_diff_check<double>(f, wrt, {1e-4, 0, seed}, {"x"});
  }});

  cases.push_back({"conv2d", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    Conv2d<double> conv(3, 4, 3, 1 + seed % 2, 1, rng);
    std::vector<Td> wrt{gc_random({2, 3, 5, 5}, rng)};
    std::vector<std::string> names{"x"};
    detail::append_parameters(conv, wrt, names, rng);
    detail::Probe probe;
    auto f = [&] { return probe({conv(wrt[0])}); };
    return finite_diff_check<double>(f, wrt, {1e-4, 0, seed}, names);
  }});

  cases.push_back({"conv_transpose2d", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    ConvTranspose2d<double> conv(3, 2, 4, 2, 1, rng);
    std::vector<Td> wrt{gc_random({2, 3, 3, 3}, rng)};
    std::vector<std::string> names{"x"};
    detail::append_parameters(conv, wrt, names, rng);
    detail::Probe probe;
    auto f = [&] { return probe({conv(wrt[0])}); };
    return finite_diff_check<double>(f, wrt, {1e-4, 0, seed}, names);
  }});

  cases.push_back({"pooling", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    std::vector<Td> wrt{gc_random({2, 3, 3, 4}, rng)};
    detail::Probe probe;
    auto f = [&] {
      const Td& x = wrt[0];
      return probe({global_avg_pool(x), global_max_pool(x), channel_mean(x), channel_max(x)});
    };
    return finite_diff_check<double>(f, wrt, detail::kinked(seed), {"x"});
  }});

  cases.push_back({"linear_mlp", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    Mlp<double> mlp(6, 4, 3, rng);
    std::vector<Td> wrt{gc_random({5, 6}, rng)};
    std::vector<std::string> names{"x"};
    detail::append_parameters(mlp, wrt, names, rng);
    detail::Probe probe;
    auto f = [&] { return probe({mlp(wrt[0])}); };
    return finite_diff_check<double>(f, wrt, detail::kinked(seed), names);
  }});

  cases.push_back({"resize_bilinear", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    std::vector<Td> wrt{gc_random({2, 3, 4, 5}, rng)};
    detail::Probe probe;
    auto f = [&] { return probe({resize_bilinear(wrt[0], 7, 3), resize_bilinear(wrt[0], 2, 9)}); };
    return finite_diff_check<double>(f, wrt, {1e-4, 0, seed}, {"x"});
  }});

  cases.push_back({"disentangler", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    Disentangler<double> d(Shape{3, 2, 2});
    for (double& v : d.mask_logits.mutable_data()) v = rng.uniform(-2.0, 2.0);
    std::vector<Td> wrt{gc_random({2, 3, 2, 2}, rng), d.mask_logits};
    detail::Probe probe;
    auto f = [&] {
      const auto out = d(wrt[0]);
      return probe({out.relevant, out.irrelevant});
    };
    return finite_diff_check<double>(f, wrt, {1e-4, 0, seed}, {"x", "mask_logits"});
  }});

  cases.push_back({"cbam", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    CbamBlock<double> block(4, 2, rng);
    std::vector<Td> wrt{gc_random({2, 4, 3, 3}, rng)};
    std::vector<std::string> names{"x"};
    detail::append_parameters(block, wrt, names, rng);
    detail::Probe probe;
    auto f = [&] { return probe({block(wrt[0])}); };
    return finite_diff_check<double>(f, wrt, detail::kinked(seed), names);
  }});

  for (bool learnable : {false, true}) {
    cases.push_back({learnable ? "gaussian_nonlocal_learnable_sigma" : "gaussian_nonlocal", 1e-5,
                     [learnable](std::uint64_t seed) {
      Rng rng(mix64(seed));
      GaussianNonLocalBlock<double> block(4, 1.0, learnable, rng);
      std::vector<Td> wrt{gc_random({2, 4, 2, 3}, rng)};
      std::vector<std::string> names{"x"};
      detail::append_parameters(block, wrt, names, rng);
      detail::Probe probe;
      auto f = [&] { return probe({block(wrt[0])}); };
      return finite_diff_check<double>(f, wrt, {1e-4, 0, seed}, names);
    }});
  }

  cases.push_back({"cascaded_attention", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    CascadedAttentionBlock<double>::Settings s;
    s.channels = 8;
    s.groups = 2;
    s.rounds = 2;
    CascadedAttentionBlock<double> block(s, rng);
    std::vector<Td> wrt{gc_random({1, 8, 4, 4}, rng)};
    std::vector<std::string> names{"x"};
    detail::append_parameters(block, wrt, names, rng);
    detail::Probe probe;
    auto f = [&] { return probe({block(wrt[0])}); };
    return finite_diff_check<double>(f, wrt, detail::kinked(seed, 24), names);
  }});

  cases.push_back({"encoders", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    const ModelConfig cfg = tiny_model_config();
    ConvStack<double> face(3, cfg.face_channels, rng);
    EyeEncoder<double> eyes(cfg, rng);
    HeadPoseBranch<double> pose(cfg, rng);
    std::vector<Td> wrt{gc_random({2, 3, 32, 32}, rng, 0.0, 1.0),
                        gc_random({2, 3, 8, 12}, rng, 0.0, 1.0),
                        gc_random({2, 3, 8, 12}, rng, 0.0, 1.0)};
    std::vector<std::string> names{"face", "eye_left", "eye_right"};
    detail::append_parameters(face, wrt, names, rng);
    detail::append_parameters(eyes, wrt, names, rng);
    detail::append_parameters(pose, wrt, names, rng);
    detail::Probe probe;
    auto f = [&] { return probe({face(wrt[0]), eyes(wrt[1], wrt[2]), pose(wrt[0])}); };
    return finite_diff_check<double>(f, wrt, detail::kinked(seed, 24), names);
  }});

  cases.push_back({"decoders", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    const ModelConfig cfg = tiny_model_config();
    const FaceLayout l = cfg.layout();
    using Target = ReconstructionDecoder<double>::Target;
    ReconstructionDecoder<double> eyes(cfg, {Target{l.left_eye, 8, 12}, Target{l.right_eye, 8, 12}}, rng);
    const Box top = l.top_region(), mid = l.mid_region(), bot = l.bottom_region();
    ReconstructionDecoder<double> regions(
        cfg, {Target{top, top.h, top.w}, Target{mid, mid.h, mid.w}, Target{bot, bot.h, bot.w}}, rng);
    std::vector<Td> wrt{gc_random({1, 8, 4, 4}, rng)};
    std::vector<std::string> names{"features"};
    detail::append_parameters(eyes, wrt, names, rng);
    detail::append_parameters(regions, wrt, names, rng);
    detail::Probe probe;
    auto f = [&] {
      auto a = eyes(wrt[0]);
      auto b = regions(wrt[0]);
      a.insert(a.end(), b.begin(), b.end());
      return probe(a);
    };
    return finite_diff_check<double>(f, wrt, detail::kinked(seed, 24), names);
  }});

  cases.push_back({"gaze_head", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    const ModelConfig cfg = tiny_model_config();
    GazeHead<double> head(cfg, rng);
    std::vector<Td> wrt{gc_random({3, 8, 4, 4}, rng), gc_random({3, cfg.eye_feature_dim()}, rng),
                        gc_random({3, cfg.pose_dim}, rng)};
    std::vector<std::string> names{"attended", "eye_features", "pose"};
    detail::append_parameters(head, wrt, names, rng);
    detail::Probe probe;
    auto f = [&] { return probe({head(wrt[0], wrt[1], wrt[2])}); };
    return finite_diff_check<double>(f, wrt, detail::kinked(seed), names);
  }});

  cases.push_back({"losses", 1e-5, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    std::vector<Td> wrt{gc_random({3, 2}, rng), gc_random({2, 3, 2, 2}, rng, 0.0, 1.0),
                        gc_random({2, 3, 2, 2}, rng, 0.0, 1.0), gc_random({2, 3, 1, 4}, rng, 0.0, 1.0),
                        gc_random({2, 3, 2, 4}, rng, 0.0, 1.0), gc_random({2, 3, 3, 4}, rng, 0.0, 1.0)};
    const Td truth = gc_random({3, 2}, rng);
    std::vector<Td> targets;
    for (std::size_t i = 1; i < wrt.size(); ++i) targets.push_back(gc_random(wrt[i].shape(), rng, 0.0, 1.0));
    auto f = [&] {
      const Td l1 = eye_recon_loss(wrt[1], wrt[2], targets[0], targets[1]);
      const Td l2 = region_recon_loss(wrt[3], wrt[4], wrt[5], targets[2], targets[3], targets[4]);
      return total_loss(l1, l2, gaze_loss(wrt[0], truth), 0.7, 1.3);
    };
    return finite_diff_check<double>(f, wrt, detail::kinked(seed),
                                     {"gaze", "recon_left", "recon_right", "recon_top", "recon_mid", "recon_bot"});
  }});

  cases.push_back({"model", 1e-4, [](std::uint64_t seed) {
    Rng rng(mix64(seed));
    const ModelConfig cfg = tiny_model_config();
    GazeModel<double> model(cfg, seed);
    // Move the mask off its symmetric start so both branches see distinct inputs.
    for (double& v : model.disentangler.mask_logits.mutable_data()) v = rng.uniform(-1.0, 1.0);
    std::vector<Td> wrt{gc_random({2, 3, 32, 32}, rng, 0.0, 1.0), gc_random({2, 3, 8, 12}, rng, 0.0, 1.0),
                        gc_random({2, 3, 8, 12}, rng, 0.0, 1.0)};
    std::vector<std::string> names{"face", "eye_left", "eye_right"};
    for (auto& p : model.parameters()) {
      if (detail::is_bias(p.name)) {
        for (double& v : p.tensor.mutable_data()) v = rng.uniform(-0.1, 0.1);
      }
      wrt.push_back(p.tensor);
      names.push_back(p.name);
    }
    detail::Probe probe;
    auto f = [&] {
      const auto o = model.forward(wrt[0], wrt[1], wrt[2]);
      return probe({o.gaze, o.recon_left, o.recon_right, o.recon_top, o.recon_mid, o.recon_bot});
    };
    return finite_diff_check<double>(f, wrt, detail::kinked(seed, 6), names);
  }});

  return cases;
}

}  // namespace dualgaze
