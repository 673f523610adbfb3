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
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dualgaze/errors.hpp"
#include "dualgaze/nn.hpp"
#include "dualgaze/ops.hpp"
#include "dualgaze/random.hpp"
#include "dualgaze/tensor.hpp"

namespace dualgaze {

/// Collects attention maps emitted by blocks it is attached to, keyed by a
/// slash-separated tag such as "upper/round0/group1/spatial".
template <typename T>
class AttentionRecorder {
 public:
  void record(const std::string& tag, const Tensor<T>& map) {
    maps_.insert_or_assign(tag, map.clone());
  }
  const std::map<std::string, Tensor<T>>& maps() const { return maps_; }
  void clear() { maps_.clear(); }

 private:
  std::map<std::string, Tensor<T>> maps_;
};

/// exp(-|q - kv|^2 / (2 sigma^2)).
template <typename T>
T gaussian_similarity(std::span<const T> q, std::span<const T> kv, double sigma) {
  if (q.size() != kv.size()) {
    throw DimensionError("gaussian_similarity: vectors of length " +
                         std::to_string(q.size()) + " and " +
                         std::to_string(kv.size()));
  }
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  T d2 = T(0);
  for (std::size_t i = 0; i < q.size(); ++i) {
    const T d = q[i] - kv[i];
    d2 += d * d;
  }
  return std::exp(-d2 / static_cast<T>(2.0 * sigma * sigma));
}

namespace detail {

// Squared distances between every query and key position, [b x nq x nk].
template <typename T>
Tensor<T> position_sq_distances(const Tensor<T>& q, const Tensor<T>& k) {
  if (q.rank() != 4 || k.rank() != 4 || q.dim(0) != k.dim(0) ||
      q.dim(1) != k.dim(1)) {
    throw DimensionError("attention matrix: query " + to_string(q.shape()) +
                         " and key " + to_string(k.shape()) +
                         " must share batch and channel extents");
  }
  const std::size_t b = q.dim(0), c = q.dim(1);
  return pairwise_sq_distances(reshape(q, {b, c, q.dim(2) * q.dim(3)}),
                               reshape(k, {b, c, k.dim(2) * k.dim(3)}));
}

}  // namespace detail

/// Gaussian similarity between every query position of q [b x c x hq x wq]
/// and every key position of k [b x c x hk x wk]: [b x hq*wq x hk*wk].
template <typename T>
Tensor<T> gaussian_attention_matrix(const Tensor<T>& q, const Tensor<T>& k,
                                    double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
  return exp(scale(detail::position_sq_distances(q, k),
                   static_cast<T>(-0.5 / (sigma * sigma))));
}

/// Same, with sigma a tracked tensor of shape [1 x 1 x 1].
template <typename T>
Tensor<T> gaussian_attention_matrix(const Tensor<T>& q, const Tensor<T>& k,
                                    const Tensor<T>& sigma) {
  if (sigma.size() != 1) throw DimensionError("sigma tensor must hold one value");
  if (!(sigma[0] > T(0))) throw ConfigError("sigma must be positive");
  const Tensor<T> coef = scale(reciprocal(square(reshape(sigma, {1, 1, 1}))), T(-0.5));
  return exp(mul(detail::position_sq_distances(q, k), coef));
}

// ---------------------------------------------------------------------------

/// Channel attention followed by spatial attention; output shape equals
/// input shape.
template <typename T>
class CbamBlock {
 public:
  CbamBlock() = default;
  CbamBlock(std::size_t channels, std::size_t reduction, Rng& rng)
      : mlp(channels, std::max<std::size_t>(1, channels / std::max<std::size_t>(reduction, 1)),
            channels, rng),
        spatial(2, 1, 7, 1, 3, rng) {}

  /// sigmoid(MLP(avgpool F) + MLP(maxpool F)) with one MLP shared by both
  /// paths; [b x c x 1 x 1].
  Tensor<T> channel_attention(const Tensor<T>& f) const {
    detail::require_4d(f, "channel_attention");
    const std::size_t b = f.dim(0), c = f.dim(1);
    const Tensor<T> avg = reshape(global_avg_pool(f), {b, c});
    const Tensor<T> max = reshape(global_max_pool(f), {b, c});
    return reshape(sigmoid(add(mlp(avg), mlp(max))), {b, c, 1, 1});
  }

  /// sigmoid(conv7x7([mean_c F, max_c F])); [b x 1 x h x w].
  Tensor<T> spatial_attention(const Tensor<T>& f) const {
    detail::require_4d(f, "spatial_attention");
    return sigmoid(spatial(concat<T>({channel_mean(f), channel_max(f)}, 1)));
  }

  Tensor<T> operator()(const Tensor<T>& f) const {
    const Tensor<T> channel_map = channel_attention(f);
    const Tensor<T> refined = mul(f, channel_map);
    const Tensor<T> spatial_map = spatial_attention(refined);
    if (recorder_) {
      recorder_->record(tag_ + "/channel", channel_map);
      recorder_->record(tag_ + "/spatial", spatial_map);
    }
    return mul(refined, spatial_map);
  }

  void attach(AttentionRecorder<T>* recorder, std::string tag) {
    recorder_ = recorder;
    tag_ = std::move(tag);
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    mlp.collect(out, prefix + ".mlp");
    spatial.collect(out, prefix + ".spatial");
  }

  Mlp<T> mlp;
  Conv2d<T> spatial;

 private:
  AttentionRecorder<T>* recorder_ = nullptr;
  std::string tag_;
};

/// Non-local block whose affinities are Gaussian similarities between
/// 1x1-projected queries and keys, softmax-normalized over key positions,
/// with a residual connection.
template <typename T>
class GaussianNonLocalBlock {
 public:
  GaussianNonLocalBlock() = default;
  GaussianNonLocalBlock(std::size_t channels, double sigma, bool learnable_sigma,
                        Rng& rng)
      : query(channels, std::max<std::size_t>(1, channels / 2), 1, 1, 0, rng),
        key(channels, std::max<std::size_t>(1, channels / 2), 1, 1, 0, rng),
        value(channels, channels, 1, 1, 0, rng),
        sigma(sigma) {
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (learnable_sigma) {
      sigma_param = make_parameter<T>({1});
      sigma_param.mutable_data()[0] = static_cast<T>(sigma);
    }
  }

  bool learnable_sigma() const { return sigma_param.defined(); }

  /// softmax over keys of the Gaussian affinity matrix, [b x n x n].
  Tensor<T> attention_weights(const Tensor<T>& f) const {
    const Tensor<T> q = query(f);
    const Tensor<T> k = key(f);
    const Tensor<T> a = learnable_sigma() ? gaussian_attention_matrix(q, k, sigma_param)
                                          : gaussian_attention_matrix(q, k, sigma);
    return softmax(a, 2);
  }

  Tensor<T> operator()(const Tensor<T>& f) const {
    detail::require_4d(f, "gaussian_nonlocal");
    const std::size_t b = f.dim(0), c = f.dim(1), n = f.dim(2) * f.dim(3);
    const Tensor<T> weights = attention_weights(f);
    if (recorder_) recorder_->record(tag_ + "/softmax", weights);
    const Tensor<T> v = reshape(value(f), {b, c, n});
    const Tensor<T> attended = matmul(v, transpose(weights));
    return add(reshape(attended, f.shape()), f);
  }

  void attach(AttentionRecorder<T>* recorder, std::string tag) {
    recorder_ = recorder;
    tag_ = std::move(tag);
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    query.collect(out, prefix + ".query");
    key.collect(out, prefix + ".key");
    value.collect(out, prefix + ".value");
    if (learnable_sigma()) out.push_back({prefix + ".sigma", sigma_param});
  }

  Conv2d<T> query;
  Conv2d<T> key;
  Conv2d<T> value;
  double sigma = 1.0;
  Tensor<T> sigma_param;

 private:
  AttentionRecorder<T>* recorder_ = nullptr;
  std::string tag_;
};

// ---------------------------------------------------------------------------

/// Multi-scale cascaded attention over channel groups.
///
/// Each round splits its input X^j into n groups of d = c/n channels. Group
/// i is projected by its own 3x3 conv, concatenated behind the previous
/// group's output (i >= 1), passed through a CBAM and a Gaussian non-local
/// block side by side, and fused back to d channels by a 1x1 tail conv. The
/// round output Z^j concatenates all group outputs. Round j >= 1 starts from
/// a 1x1 fusion of [Z^{j-1}, X^{j-1}] (2c -> c). The block returns the last
/// round's Z.
template <typename T>
class CascadedAttentionBlock {
 public:
  struct GroupUnit {
    Conv2d<T> sub;
    CbamBlock<T> cbam;
    GaussianNonLocalBlock<T> nonlocal;
    Conv2d<T> tail;
  };

  struct Settings {
    std::size_t channels = 0;
    std::size_t groups = 4;
    std::size_t rounds = 4;
    double sigma = 1.0;
    bool learnable_sigma = false;
    std::size_t cbam_reduction = 4;
  };

  CascadedAttentionBlock() = default;
  CascadedAttentionBlock(const Settings& s, Rng& rng) : settings_(s) {
    if (s.groups == 0 || s.rounds == 0) {
      throw ConfigError("cascaded attention needs at least one group and one round");
    }
    if (s.channels == 0 || s.channels % s.groups != 0) {
      throw ConfigError(std::to_string(s.channels) +
                        " channels are not divisible into " +
                        std::to_string(s.groups) + " groups");
    }
    const std::size_t d = s.channels / s.groups;
    units_.resize(s.rounds);
    for (std::size_t j = 0; j < s.rounds; ++j) {
      if (j > 0) fusion_.emplace_back(2 * s.channels, s.channels, 1, 1, 0, rng);
      for (std::size_t i = 0; i < s.groups; ++i) {
        const std::size_t width = i == 0 ? d : 2 * d;
        GroupUnit unit;
        unit.sub = Conv2d<T>(d, d, 3, 1, 1, rng);
        unit.cbam = CbamBlock<T>(width, s.cbam_reduction, rng);
        unit.nonlocal = GaussianNonLocalBlock<T>(width, s.sigma, s.learnable_sigma, rng);
        unit.tail = Conv2d<T>(2 * width, d, 1, 1, 0, rng);
        units_[j].push_back(std::move(unit));
      }
    }
  }

  const Settings& settings() const { return settings_; }
  std::size_t group_width() const { return settings_.channels / settings_.groups; }

  GroupUnit& unit(std::size_t round, std::size_t group) { return units_.at(round).at(group); }
  const GroupUnit& unit(std::size_t round, std::size_t group) const {
    return units_.at(round).at(group);
  }
  const Conv2d<T>& fusion(std::size_t round) const { return fusion_.at(round - 1); }

  /// z_i = tail([CBAM(t), G(t)]) with t = x_sub (i = 0) or
  /// [z_{i-1}, x_sub] (i >= 1). x_sub is the already projected group.
  Tensor<T> group_step(std::size_t round, std::size_t group, const Tensor<T>& x_sub,
                       const Tensor<T>* z_prev) const {
    if ((group == 0) != (z_prev == nullptr)) {
      throw UsageError("group " + std::to_string(group) +
                       (group == 0 ? " takes no previous output"
                                   : " needs the previous group's output"));
    }
    const GroupUnit& u = unit(round, group);
    const Tensor<T> t = z_prev ? concat<T>({*z_prev, x_sub}, 1) : x_sub;
    return u.tail(concat<T>({u.cbam(t), u.nonlocal(t)}, 1));
  }

  /// One traversal of all groups: Z^j from X^j.
  Tensor<T> round_output(std::size_t round, const Tensor<T>& x) const {
    const auto groups = group_split(x, settings_.groups);
    std::vector<Tensor<T>> outputs;
    outputs.reserve(groups.size());
    for (std::size_t i = 0; i < groups.size(); ++i) {
      const Tensor<T> x_sub = unit(round, i).sub(groups[i]);
      outputs.push_back(group_step(round, i, x_sub, i == 0 ? nullptr : &outputs.back()));
    }
    return outputs.size() == 1 ? outputs.front() : concat(outputs, 1);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    detail::require_4d(x, "cascaded_attention");
    if (x.dim(1) != settings_.channels) {
      throw DimensionError("cascaded attention built for " +
                           std::to_string(settings_.channels) + " channels, got " +
                           to_string(x.shape()));
    }
    Tensor<T> input = x;
    Tensor<T> z = round_output(0, input);
    for (std::size_t j = 1; j < settings_.rounds; ++j) {
      input = fusion(j)(concat<T>({z, input}, 1));
      z = round_output(j, input);
    }
    return z;
  }

  void attach(AttentionRecorder<T>* recorder, const std::string& tag) {
    for (std::size_t j = 0; j < units_.size(); ++j) {
      for (std::size_t i = 0; i < units_[j].size(); ++i) {
        const std::string prefix =
            tag + "/round" + std::to_string(j) + "/group" + std::to_string(i);
        units_[j][i].cbam.attach(recorder, prefix + "/cbam");
        units_[j][i].nonlocal.attach(recorder, prefix + "/nonlocal");
      }
    }
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t j = 0; j < units_.size(); ++j) {
      const std::string rp = prefix + ".round" + std::to_string(j);
      if (j > 0) fusion_[j - 1].collect(out, rp + ".fusion");
      for (std::size_t i = 0; i < units_[j].size(); ++i) {
        const std::string gp = rp + ".group" + std::to_string(i);
        const GroupUnit& u = units_[j][i];
        u.sub.collect(out, gp + ".sub");
        u.cbam.collect(out, gp + ".cbam");
        u.nonlocal.collect(out, gp + ".nonlocal");
        u.tail.collect(out, gp + ".tail");
      }
    }
  }

 private:
  Settings settings_;
  std::vector<std::vector<GroupUnit>> units_;
  std::vector<Conv2d<T>> fusion_;
};

}  // namespace dualgaze
