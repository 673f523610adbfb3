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

#include <cmath>
#include <cstddef>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dualgaze/errors.hpp"
#include "dualgaze/gemm.hpp"
#include "dualgaze/ops.hpp"
#include "dualgaze/random.hpp"
#include "dualgaze/tensor.hpp"

namespace dualgaze {

template <typename T>
struct NamedParameter {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedParameter<T>>;

/// Trainable tensor: requires_grad set, values from init_fan_in_uniform.
template <typename T>
Tensor<T> make_parameter(Shape shape) {
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  return t;
}

/// U(-b, b) with b = sqrt(1 / fan_in).
template <typename T>
void init_fan_in_uniform(Tensor<T>& w, std::size_t fan_in, Rng& rng) {
  if (fan_in == 0) throw ConfigError("fan_in must be positive");
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (T& v : w.mutable_data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

// ---------------------------------------------------------------------------

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t c_in, std::size_t c_out, std::size_t kernel,
         std::size_t stride, std::size_t padding, Rng& rng)
      : weight(make_parameter<T>({c_out, c_in, kernel, kernel})),
        bias(make_parameter<T>({c_out})),
        stride(stride),
        padding(padding) {
    init_fan_in_uniform(weight, c_in * kernel * kernel, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, stride, padding);
  }

  std::size_t in_channels() const { return weight.dim(1); }
  std::size_t out_channels() const { return weight.dim(0); }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }

  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Weight layout [c_in x c_out x k x k].
template <typename T>
class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::size_t c_in, std::size_t c_out, std::size_t kernel,
                  std::size_t stride, std::size_t padding, Rng& rng)
      : weight(make_parameter<T>({c_in, c_out, kernel, kernel})),
        bias(make_parameter<T>({c_out})),
        stride(stride),
        padding(padding) {
    init_fan_in_uniform(weight, c_out * kernel * kernel, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    return conv_transpose2d(x, weight, bias, stride, padding);
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }

  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// ---------------------------------------------------------------------------

/// Affine map x W^T + b on the last axis of x [... x d_in].
///
/// The forward pass runs one matrix-vector product per row so a row's output
/// never depends on how many rows share the call.
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias) {
  if (weight.rank() != 2 || x.rank() < 1 || x.shape().back() != weight.dim(1)) {
    throw DimensionError("linear: input " + to_string(x.shape()) +
                         " incompatible with weight " + to_string(weight.shape()));
  }
  const std::size_t d_out = weight.dim(0), d_in = weight.dim(1);
  detail::check_bias(bias, d_out, "linear");
  const std::size_t rows = x.size() / d_in;
  Shape shape = x.shape();
  shape.back() = d_out;
  std::vector<T> out(rows * d_out);
  for (std::size_t r = 0; r < rows; ++r) {
    T* y = out.data() + r * d_out;
    detail::gemm(false, true, 1, d_out, d_in, x.data().data() + r * d_in,
                 weight.data().data(), y, false);
    if (bias.defined()) {
      for (std::size_t j = 0; j < d_out; ++j) y[j] += bias[j];
    }
  }
  Tape<T>* tape = bias.defined() ? detail::tape_for<T>(x, weight, bias)
                                 : detail::tape_for<T>(x, weight);
  Tensor<T> result = detail::finish(std::move(shape), std::move(out), tape, "linear");
  if (tape) {
    auto bs = bias.defined() ? bias.storage() : nullptr;
    tape->record([xs = x.storage(), ws = weight.storage(), bs,
                  os = result.storage(), rows, d_in, d_out] {
      if (!detail::reached(os)) return;
      const T* go = os->grad.data();
      if (xs->requires_grad) {
        detail::gemm(false, false, rows, d_in, d_out, go, ws->data.data(),
                     xs->ensure_grad().data(), true);
      }
      if (ws->requires_grad) {
        detail::gemm(true, false, d_out, d_in, rows, go, xs->data.data(),
                     ws->ensure_grad().data(), true);
      }
      if (bs && bs->requires_grad) {
        auto& gb = bs->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t j = 0; j < d_out; ++j) gb[j] += go[r * d_out + j];
        }
      }
    });
  }
  return result;
}

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(std::size_t d_in, std::size_t d_out, Rng& rng)
      : weight(make_parameter<T>({d_out, d_in})), bias(make_parameter<T>({d_out})) {
    init_fan_in_uniform(weight, d_in, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  std::size_t in_features() const { return weight.dim(1); }
  std::size_t out_features() const { return weight.dim(0); }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }

  Tensor<T> weight;
  Tensor<T> bias;
};

/// linear -> ReLU -> linear.
template <typename T>
class Mlp {
 public:
  Mlp() = default;
  Mlp(std::size_t d_in, std::size_t hidden, std::size_t d_out, Rng& rng)
      : first(d_in, hidden, rng), second(hidden, d_out, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return second(relu(first(x))); }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    first.collect(out, prefix + ".fc1");
    second.collect(out, prefix + ".fc2");
  }

  Linear<T> first;
  Linear<T> second;
};

// ---------------------------------------------------------------------------
// Pooling over [b x c x h x w].

namespace detail {
template <typename T>
void require_4d(const Tensor<T>& x, const char* op) {
  if (x.rank() != 4) {
    throw DimensionError(std::string(op) + " expects [b x c x h x w], got " +
                         to_string(x.shape()));
  }
}
}  // namespace detail

/// Per-channel spatial mean, [b x c x 1 x 1].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_4d(x, "global_avg_pool");
  const std::size_t b = x.dim(0), c = x.dim(1);
  return reshape(mean_axis(reshape(x, {b, c, x.dim(2) * x.dim(3)}), 2), {b, c, 1, 1});
}

/// Per-channel spatial max, [b x c x 1 x 1].
template <typename T>
Tensor<T> global_max_pool(const Tensor<T>& x) {
  detail::require_4d(x, "global_max_pool");
  const std::size_t b = x.dim(0), c = x.dim(1);
  return reshape(max_axis(reshape(x, {b, c, x.dim(2) * x.dim(3)}), 2), {b, c, 1, 1});
}

/// Mean over channels, [b x 1 x h x w].
template <typename T>
Tensor<T> channel_mean(const Tensor<T>& x) {
  detail::require_4d(x, "channel_mean");
  return mean_axis(x, 1);
}

/// Max over channels, [b x 1 x h x w].
template <typename T>
Tensor<T> channel_max(const Tensor<T>& x) {
  detail::require_4d(x, "channel_max");
  return max_axis(x, 1);
}

}  // namespace dualgaze
