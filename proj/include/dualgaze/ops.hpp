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
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dualgaze/errors.hpp"
#include "dualgaze/gemm.hpp"
#include "dualgaze/tape.hpp"
#include "dualgaze/tensor.hpp"

// Debug builds check every op output for NaN/Inf; release builds can opt in
// by defining DUALGAZE_CHECK_FINITE.
#if !defined(NDEBUG) && !defined(DUALGAZE_CHECK_FINITE)
#define DUALGAZE_CHECK_FINITE 1
#endif

namespace dualgaze {

namespace detail {

template <typename T>
Tensor<T> finish(Shape shape, std::vector<T> data, Tape<T>* tape,
                 [[maybe_unused]] const char* op) {
  Tensor<T> out(std::move(shape), std::move(data));
  if (tape) out.set_requires_grad(true);
#ifdef DUALGAZE_CHECK_FINITE
  if (!all_finite(out.data())) {
    throw NumericError(std::string("non-finite output from ") + op);
  }
#endif
  return out;
}

template <typename T>
bool reached(const std::shared_ptr<TensorStorage<T>>& out) {
  return !out->grad.empty();
}

/// Offsets into b for every flat index of a; empty when the shapes match.
inline std::vector<std::size_t> broadcast_offsets(const Shape& a,
                                                  const Shape& b,
                                                  const char* op) {
  if (a.size() != b.size()) {
    throw DimensionError(std::string(op) + ": rank mismatch " + to_string(a) +
                         " vs " + to_string(b));
  }
  if (a == b) return {};
  const std::size_t rank = a.size();
  std::vector<std::size_t> stride(rank, 0);
  std::size_t s = 1;
  for (std::size_t ax = rank; ax-- > 0;) {
    if (b[ax] != a[ax] && b[ax] != 1) {
      throw DimensionError(std::string(op) + ": cannot broadcast " +
                           to_string(b) + " onto " + to_string(a));
    }
    stride[ax] = (b[ax] == 1 && a[ax] != 1) ? 0 : s;
    s *= b[ax];
  }
  std::vector<std::size_t> offsets(numel(a));
  std::vector<std::size_t> idx(rank, 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < offsets.size(); ++i) {
    offsets[i] = off;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++idx[ax];
      off += stride[ax];
      if (idx[ax] < a[ax]) break;
      off -= stride[ax] * idx[ax];
      idx[ax] = 0;
    }
  }
  return offsets;
}

/// Splits a shape around one axis into (outer, extent, inner) products.
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisView axis_view(const Shape& shape, std::size_t axis,
                          const char* op) {
  if (axis >= shape.size()) {
    throw DimensionError(std::string(op) + ": axis " + std::to_string(axis) +
                         " out of range for " + to_string(shape));
  }
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <typename T, typename Fwd, typename Deriv>
Tensor<T> map_unary(const Tensor<T>& a, Fwd fwd, Deriv deriv, const char* op) {
  auto src = a.data();
  std::vector<T> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = fwd(src[i]);
  Tape<T>* tape = tape_for<T>(a);
  Tensor<T> result = finish(a.shape(), std::move(out), tape, op);
  if (tape) {
    tape->record([as = a.storage(), os = result.storage(), deriv] {
      if (!reached(os) || !as->requires_grad) return;
      auto& ga = as->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) {
        ga[i] += os->grad[i] * deriv(as->data[i], os->data[i]);
      }
    });
  }
  return result;
}

// Partial derivatives receive (a, b, out) values.
template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> map_binary(const Tensor<T>& a, const Tensor<T>& b, Fwd fwd, DA da,
                     DB db, const char* op) {
  auto offsets = std::make_shared<std::vector<std::size_t>>(
      broadcast_offsets(a.shape(), b.shape(), op));
  auto x = a.data();
  auto y = b.data();
  std::vector<T> out(x.size());
  if (offsets->empty()) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i], y[i]);
  } else {
    for (std::size_t i = 0; i < x.size(); ++i) {
      out[i] = fwd(x[i], y[(*offsets)[i]]);
    }
  }
  Tape<T>* tape = tape_for<T>(a, b);
  Tensor<T> result = finish(a.shape(), std::move(out), tape, op);
  if (tape) {
    tape->record([as = a.storage(), bs = b.storage(), os = result.storage(),
                  offsets, da, db] {
      if (!reached(os)) return;
      const auto& go = os->grad;
      const bool direct = offsets->empty();
      if (as->requires_grad) {
        auto& ga = as->ensure_grad();
        for (std::size_t i = 0; i < go.size(); ++i) {
          const std::size_t j = direct ? i : (*offsets)[i];
          ga[i] += go[i] * da(as->data[i], bs->data[j], os->data[i]);
        }
      }
      if (bs->requires_grad) {
        auto& gb = bs->ensure_grad();
        for (std::size_t i = 0; i < go.size(); ++i) {
          const std::size_t j = direct ? i : (*offsets)[i];
          gb[j] += go[i] * db(as->data[i], bs->data[j], os->data[i]);
        }
      }
    });
  }
  return result;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise. Binary ops keep a's shape; b may have extent 1 on any axis.

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::map_binary(
      a, b, [](T x, T y) { return x + y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(1); }, "add");
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::map_binary(
      a, b, [](T x, T y) { return x - y; }, [](T, T, T) { return T(1); },
      [](T, T, T) { return T(-1); }, "sub");
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::map_binary(
      a, b, [](T x, T y) { return x * y; }, [](T, T y, T) { return y; },
      [](T x, T, T) { return x; }, "mul");
}

template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
  return detail::map_binary(
      a, b, [](T x, T y) { return x / y; }, [](T, T y, T) { return T(1) / y; },
      [](T, T y, T o) { return -o / y; }, "div");
}

template <typename T>
Tensor<T> neg(const Tensor<T>& a) {
  return detail::map_unary(
      a, [](T x) { return -x; }, [](T, T) { return T(-1); }, "neg");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  return detail::map_unary(
      a, [s](T x) { return s * x; }, [s](T, T) { return s; }, "scale");
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
  return detail::map_unary(
      a, [s](T x) { return x + s; }, [](T, T) { return T(1); }, "add_scalar");
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
  return detail::map_unary(
      a, [](T x) { return std::exp(x); }, [](T, T y) { return y; }, "exp");
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return detail::map_unary(
      a, [](T x) { return detail::stable_sigmoid(x); },
      [](T, T y) { return y * (T(1) - y); }, "sigmoid");
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return detail::map_unary(
      a, [](T x) { return x <= T(0) ? T(0) : x; },  // NaN passes through
      [](T x, T) { return x > T(0) ? T(1) : T(0); }, "relu");
}

template <typename T>
Tensor<T> abs(const Tensor<T>& a) {
  return detail::map_unary(
      a, [](T x) { return std::abs(x); },
      [](T x, T) { return x > T(0) ? T(1) : (x < T(0) ? T(-1) : T(0)); },
      "abs");
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  return detail::map_unary(
      a, [](T x) { return x * x; }, [](T x, T) { return T(2) * x; },
      "square");
}

template <typename T>
Tensor<T> reciprocal(const Tensor<T>& a) {
  return detail::map_unary(
      a, [](T x) { return T(1) / x; }, [](T, T y) { return -y * y; },
      "reciprocal");
}

/// max(a, lo); the gradient is zero wherever the floor is active.
template <typename T>
Tensor<T> clamp_min(const Tensor<T>& a, T lo) {
  return detail::map_unary(
      a, [lo](T x) { return x > lo ? x : lo; },
      [lo](T x, T) { return x > lo ? T(1) : T(0); }, "clamp_min");
}

// ---------------------------------------------------------------------------
// Reductions.

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  T total = T(0);
  for (T v : a.data()) total += v;
  Tape<T>* tape = detail::tape_for<T>(a);
  Tensor<T> result = detail::finish(Shape{}, std::vector<T>{total}, tape, "sum");
  if (tape) {
    tape->record([as = a.storage(), os = result.storage()] {
      if (!detail::reached(os) || !as->requires_grad) return;
      const T g = os->grad[0];
      for (T& v : as->ensure_grad()) v += g;
    });
  }
  return result;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

enum class Reduce { kSum, kMean, kMax };

/// Reduces one axis, keeping it with extent 1. Max sends the gradient to the
/// first (lowest-index) maximum.
template <typename T>
Tensor<T> reduce_axis(const Tensor<T>& a, std::size_t axis, Reduce kind) {
  const auto v = detail::axis_view(a.shape(), axis, "reduce_axis");
  if (v.extent == 0) throw DimensionError("reduction over an empty axis");
  Shape shape = a.shape();
  shape[axis] = 1;
  auto x = a.data();
  std::vector<T> out(v.outer * v.inner);
  auto argmax = std::make_shared<std::vector<std::size_t>>();
  if (kind == Reduce::kMax) argmax->resize(out.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      const std::size_t dst = o * v.inner + in;
      if (kind == Reduce::kMax) {
        std::size_t best = 0;
        T best_val = x[base];
        for (std::size_t e = 1; e < v.extent; ++e) {
          const T val = x[base + e * v.inner];
          if (val > best_val) {
            best_val = val;
            best = e;
          }
        }
        out[dst] = best_val;
        (*argmax)[dst] = best;
      } else {
        T acc = T(0);
        for (std::size_t e = 0; e < v.extent; ++e) acc += x[base + e * v.inner];
        out[dst] = kind == Reduce::kMean ? acc / static_cast<T>(v.extent) : acc;
      }
    }
  }
  Tape<T>* tape = detail::tape_for<T>(a);
  Tensor<T> result = detail::finish(std::move(shape), std::move(out), tape,
                                    "reduce_axis");
  if (tape) {
    tape->record([as = a.storage(), os = result.storage(), v, kind, argmax] {
      if (!detail::reached(os) || !as->requires_grad) return;
      auto& ga = as->ensure_grad();
      const T w = kind == Reduce::kMean ? T(1) / static_cast<T>(v.extent) : T(1);
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
          const std::size_t base = o * v.extent * v.inner + in;
          const std::size_t src = o * v.inner + in;
          const T g = os->grad[src];
          if (kind == Reduce::kMax) {
            ga[base + (*argmax)[src] * v.inner] += g;
          } else {
            for (std::size_t e = 0; e < v.extent; ++e) ga[base + e * v.inner] += g * w;
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> sum_axis(const Tensor<T>& a, std::size_t axis) {
  return reduce_axis(a, axis, Reduce::kSum);
}
template <typename T>
Tensor<T> mean_axis(const Tensor<T>& a, std::size_t axis) {
  return reduce_axis(a, axis, Reduce::kMean);
}
template <typename T>
Tensor<T> max_axis(const Tensor<T>& a, std::size_t axis) {
  return reduce_axis(a, axis, Reduce::kMax);
}

// ---------------------------------------------------------------------------
// Layout.

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape " + to_string(a.shape()) + " -> " +
                         to_string(shape));
  }
  auto src = a.data();
  Tape<T>* tape = detail::tape_for<T>(a);
  Tensor<T> result = detail::finish(std::move(shape),
                                    std::vector<T>(src.begin(), src.end()),
                                    tape, "reshape");
  if (tape) {
    tape->record([as = a.storage(), os = result.storage()] {
      if (!detail::reached(os) || !as->requires_grad) return;
      auto& ga = as->ensure_grad();
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += os->grad[i];
    });
  }
  return result;
}

/// Collapses every axis after the first: [b x ...] -> [b x rest].
template <typename T>
Tensor<T> flatten(const Tensor<T>& a) {
  const std::size_t b = a.dim(0);
  return reshape(a, Shape{b, a.size() / b});
}

/// Swaps the last two axes.
template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() < 2) throw DimensionError("transpose needs rank >= 2");
  Shape shape = a.shape();
  const std::size_t rows = shape[shape.size() - 2];
  const std::size_t cols = shape.back();
  std::swap(shape[shape.size() - 2], shape.back());
  const std::size_t batch = a.size() / std::max<std::size_t>(rows * cols, 1);
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t off = b * rows * cols;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        out[off + c * rows + r] = x[off + r * cols + c];
      }
    }
  }
  Tape<T>* tape = detail::tape_for<T>(a);
  Tensor<T> result = detail::finish(std::move(shape), std::move(out), tape,
                                    "transpose");
  if (tape) {
    tape->record([as = a.storage(), os = result.storage(), batch, rows, cols] {
      if (!detail::reached(os) || !as->requires_grad) return;
      auto& ga = as->ensure_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        const std::size_t off = b * rows * cols;
        for (std::size_t r = 0; r < rows; ++r) {
          for (std::size_t c = 0; c < cols; ++c) {
            ga[off + r * cols + c] += os->grad[off + c * rows + r];
          }
        }
      }
    });
  }
  return result;
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of an empty list");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw DimensionError("concat axis out of range");
  Shape shape = first;
  shape[axis] = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    if (s.size() != first.size()) {
      throw DimensionError("concat rank mismatch: " + to_string(s) + " vs " +
                           to_string(first));
    }
    for (std::size_t ax = 0; ax < s.size(); ++ax) {
      if (ax != axis && s[ax] != first[ax]) {
        throw DimensionError("concat extent mismatch: " + to_string(s) +
                             " vs " + to_string(first));
      }
    }
    shape[axis] += s[axis];
  }
  const auto v = detail::axis_view(shape, axis, "concat");
  std::vector<T> out(numel(shape));
  std::size_t start = 0;
  for (const auto& p : parts) {
    const std::size_t ext = p.dim(axis);
    auto x = p.data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy_n(x.begin() + o * ext * v.inner, ext * v.inner,
                  out.begin() + (o * v.extent + start) * v.inner);
    }
    start += ext;
  }
  Tape<T>* tape = detail::tape_for_list<T>(parts);
  Tensor<T> result = detail::finish(std::move(shape), std::move(out), tape,
                                    "concat");
  if (tape) {
    std::vector<std::shared_ptr<detail::TensorStorage<T>>> inputs;
    for (const auto& p : parts) inputs.push_back(p.storage());
    tape->record([inputs, os = result.storage(), v, axis] {
      if (!detail::reached(os)) return;
      std::size_t start = 0;
      for (const auto& in : inputs) {
        const std::size_t ext = in->shape[axis];
        if (in->requires_grad) {
          auto& g = in->ensure_grad();
          for (std::size_t o = 0; o < v.outer; ++o) {
            const T* src = os->grad.data() + (o * v.extent + start) * v.inner;
            T* dst = g.data() + o * ext * v.inner;
            for (std::size_t i = 0; i < ext * v.inner; ++i) dst[i] += src[i];
          }
        }
        start += ext;
      }
    });
  }
  return result;
}

/// The [start, start + length) range of one axis.
template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start,
                std::size_t length) {
  const auto v = detail::axis_view(a.shape(), axis, "slice");
  if (start + length > v.extent || length == 0) {
    throw DimensionError("slice [" + std::to_string(start) + ", " +
                         std::to_string(start + length) + ") out of range for " +
                         to_string(a.shape()));
  }
  Shape shape = a.shape();
  shape[axis] = length;
  auto x = a.data();
  std::vector<T> out(numel(shape));
  for (std::size_t o = 0; o < v.outer; ++o) {
    std::copy_n(x.begin() + (o * v.extent + start) * v.inner, length * v.inner,
                out.begin() + o * length * v.inner);
  }
  Tape<T>* tape = detail::tape_for<T>(a);
  Tensor<T> result = detail::finish(std::move(shape), std::move(out), tape,
                                    "slice");
  if (tape) {
    tape->record([as = a.storage(), os = result.storage(), v, start, length] {
      if (!detail::reached(os) || !as->requires_grad) return;
      auto& ga = as->ensure_grad();
      for (std::size_t o = 0; o < v.outer; ++o) {
        const T* src = os->grad.data() + o * length * v.inner;
        T* dst = ga.data() + (o * v.extent + start) * v.inner;
        for (std::size_t i = 0; i < length * v.inner; ++i) dst[i] += src[i];
      }
    });
  }
  return result;
}

/// n contiguous, order-preserving channel groups of x [b x c x ...].
template <typename T>
std::vector<Tensor<T>> group_split(const Tensor<T>& x, std::size_t n) {
  if (x.rank() < 2) throw DimensionError("group_split needs a channel axis");
  const std::size_t c = x.dim(1);
  if (n == 0 || c % n != 0) {
    throw ConfigError("cannot split " + std::to_string(c) + " channels into " +
                      std::to_string(n) + " groups");
  }
  if (n == 1) return {x};
  std::vector<Tensor<T>> groups;
  groups.reserve(n);
  for (std::size_t i = 0; i < n; ++i) groups.push_back(slice(x, 1, i * (c / n), c / n));
  return groups;
}

// ---------------------------------------------------------------------------
// Linear algebra.

/// [m x p] * [p x q], or batched [b x m x p] * [b x p x q].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != b.rank() || (a.rank() != 2 && a.rank() != 3)) {
    throw DimensionError("matmul expects two rank-2 or two rank-3 tensors, got " +
                         to_string(a.shape()) + " and " + to_string(b.shape()));
  }
  const bool batched = a.rank() == 3;
  const std::size_t batch = batched ? a.dim(0) : 1;
  const std::size_t m = a.dim(a.rank() - 2);
  const std::size_t p = a.dim(a.rank() - 1);
  const std::size_t q = b.dim(b.rank() - 1);
  if (b.dim(b.rank() - 2) != p || (batched && b.dim(0) != batch)) {
    throw DimensionError("matmul inner dimension mismatch: " +
                         to_string(a.shape()) + " x " + to_string(b.shape()));
  }
  Shape shape = batched ? Shape{batch, m, q} : Shape{m, q};
  std::vector<T> out(batch * m * q);
  for (std::size_t i = 0; i < batch; ++i) {
    detail::gemm(false, false, m, q, p, a.data().data() + i * m * p,
                 b.data().data() + i * p * q, out.data() + i * m * q, false);
  }
  Tape<T>* tape = detail::tape_for<T>(a, b);
  Tensor<T> result = detail::finish(std::move(shape), std::move(out), tape,
                                    "matmul");
  if (tape) {
    tape->record([as = a.storage(), bs = b.storage(), os = result.storage(),
                  batch, m, p, q] {
      if (!detail::reached(os)) return;
      for (std::size_t i = 0; i < batch; ++i) {
        const T* go = os->grad.data() + i * m * q;
        if (as->requires_grad) {
          detail::gemm(false, true, m, p, q, go, bs->data.data() + i * p * q,
                       as->ensure_grad().data() + i * m * p, true);
        }
        if (bs->requires_grad) {
          detail::gemm(true, false, p, q, m, as->data.data() + i * m * p, go,
                       bs->ensure_grad().data() + i * p * q, true);
        }
      }
    });
  }
  return result;
}

/// Squared Euclidean distances between the columns of q [b x c x nq] and
/// k [b x c x nk]: [b x nq x nk]. Summed difference by difference, so a
/// column compared with itself gives exactly zero.
template <typename T>
Tensor<T> pairwise_sq_distances(const Tensor<T>& q, const Tensor<T>& k) {
  if (q.rank() != 3 || k.rank() != 3 || q.dim(0) != k.dim(0) || q.dim(1) != k.dim(1)) {
    throw DimensionError("pairwise_sq_distances: " + to_string(q.shape()) + " and " +
                         to_string(k.shape()) + " must be [b x c x n] with shared b and c");
  }
  const std::size_t b = q.dim(0), c = q.dim(1), nq = q.dim(2), nk = k.dim(2);
  // Position-major copies keep the inner loop contiguous.
  auto position_major = [c](std::span<const T> x, std::size_t i, std::size_t n) {
    std::vector<T> t(n * c);
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t p = 0; p < n; ++p) t[p * c + ch] = x[(i * c + ch) * n + p];
    return t;
  };
  std::vector<T> out(b * nq * nk);
  for (std::size_t i = 0; i < b; ++i) {
    const std::vector<T> qt = position_major(q.data(), i, nq);
    const std::vector<T> kt = position_major(k.data(), i, nk);
    for (std::size_t p = 0; p < nq; ++p)
      for (std::size_t r = 0; r < nk; ++r) {
        T acc = T(0);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const T d = qt[p * c + ch] - kt[r * c + ch];
          acc += d * d;
        }
        out[(i * nq + p) * nk + r] = acc;
      }
  }
  Tape<T>* tape = detail::tape_for<T>(q, k);
  Tensor<T> result = detail::finish(Shape{b, nq, nk}, std::move(out), tape,
                                    "pairwise_sq_distances");
  if (tape) {
    tape->record([qs = q.storage(), ks = k.storage(), os = result.storage(), b, c, nq, nk] {
      if (!detail::reached(os)) return;
      // dD[p,r]/dq[:,p] = 2 (q_p - k_r), dD[p,r]/dk[:,r] = 2 (k_r - q_p).
      for (std::size_t i = 0; i < b; ++i) {
        const T* g = os->grad.data() + i * nq * nk;
        const T* qd = qs->data.data() + i * c * nq;
        const T* kd = ks->data.data() + i * c * nk;
        std::vector<T> row(nq, T(0)), col(nk, T(0));
        for (std::size_t p = 0; p < nq; ++p)
          for (std::size_t r = 0; r < nk; ++r) {
            row[p] += g[p * nk + r];
            col[r] += g[p * nk + r];
          }
        if (qs->requires_grad) {
          T* gq = qs->ensure_grad().data() + i * c * nq;
          std::vector<T> kg(c * nq);
          detail::gemm(false, true, c, nq, nk, kd, g, kg.data(), false);
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < nq; ++p)
              gq[ch * nq + p] += T(2) * (row[p] * qd[ch * nq + p] - kg[ch * nq + p]);
        }
        if (ks->requires_grad) {
          T* gk = ks->ensure_grad().data() + i * c * nk;
          std::vector<T> qg(c * nk);
          detail::gemm(false, false, c, nk, nq, qd, g, qg.data(), false);
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t r = 0; r < nk; ++r)
              gk[ch * nk + r] += T(2) * (col[r] * kd[ch * nk + r] - qg[ch * nk + r]);
        }
      }
    });
  }
  return result;
}

/// Max-shifted softmax along one axis.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a, std::size_t axis) {
  const auto v = detail::axis_view(a.shape(), axis, "softmax");
  auto x = a.data();
  std::vector<T> out(x.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.extent * v.inner + in;
      T hi = x[base];
      for (std::size_t e = 1; e < v.extent; ++e) hi = std::max(hi, x[base + e * v.inner]);
      T total = T(0);
      for (std::size_t e = 0; e < v.extent; ++e) {
        const T ev = std::exp(x[base + e * v.inner] - hi);
        out[base + e * v.inner] = ev;
        total += ev;
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= total;
    }
  }
  Tape<T>* tape = detail::tape_for<T>(a);
  Tensor<T> result = detail::finish(a.shape(), std::move(out), tape, "softmax");
  if (tape) {
    tape->record([as = a.storage(), os = result.storage(), v] {
      if (!detail::reached(os) || !as->requires_grad) return;
      auto& ga = as->ensure_grad();
      const auto& y = os->data;
      const auto& gy = os->grad;
      for (std::size_t o = 0; o < v.outer; ++o) {
        for (std::size_t in = 0; in < v.inner; ++in) {
          const std::size_t base = o * v.extent * v.inner + in;
          T dot = T(0);
          for (std::size_t e = 0; e < v.extent; ++e) {
            dot += gy[base + e * v.inner] * y[base + e * v.inner];
          }
          for (std::size_t e = 0; e < v.extent; ++e) {
            const std::size_t i = base + e * v.inner;
            ga[i] += y[i] * (gy[i] - dot);
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Convolution.

namespace detail {

struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w, stride, padding;
  std::size_t out_h, out_w;

  std::size_t rows() const { return channels * kernel_h * kernel_w; }
  std::size_t cols() const { return out_h * out_w; }
};

inline std::size_t conv_extent(std::size_t in, std::size_t kernel,
                               std::size_t stride, std::size_t padding) {
  if (stride == 0) throw ConfigError("convolution stride must be positive");
  if (in + 2 * padding < kernel) {
    throw DimensionError("convolution window " + std::to_string(kernel) +
                         " larger than padded input " +
                         std::to_string(in + 2 * padding));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

// Unfolds one [c x h x w] image into [c*kh*kw x oh*ow] patch columns.
template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        T* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* src = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.width))
                          ? T(0)
                          : src[ix];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates patch columns back into the image.
template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* x) {
  for (std::size_t c = 0; c < g.channels; ++c) {
    for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < g.kernel_w; ++kx) {
        const T* row = col + ((c * g.kernel_h + ky) * g.kernel_w + kx) * g.cols();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) -
                                    static_cast<std::ptrdiff_t>(g.padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.height)) continue;
          T* dst = x + (c * g.height + static_cast<std::size_t>(iy)) * g.width;
          const T* src = row + oy * g.out_w;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * g.stride + kx) -
                                      static_cast<std::ptrdiff_t>(g.padding);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.width)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_bias(const Tensor<T>& bias, std::size_t channels, const char* op) {
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != channels)) {
    throw DimensionError(std::string(op) + ": bias shape " +
                         to_string(bias.shape()) + " does not match " +
                         std::to_string(channels) + " output channels");
  }
}

}  // namespace detail

/// Cross-correlation of x [b x c_in x h x w] with weight
/// [c_out x c_in x kh x kw]; bias [c_out] is optional (pass an undefined
/// tensor to skip it).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight,
                 const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw DimensionError("conv2d expects 4-D input and weight, got " +
                         to_string(x.shape()) + " and " +
                         to_string(weight.shape()));
  }
  if (x.dim(1) != weight.dim(1)) {
    throw DimensionError("conv2d channel mismatch: input " +
                         to_string(x.shape()) + ", weight " +
                         to_string(weight.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t c_out = weight.dim(0);
  detail::check_bias(bias, c_out, "conv2d");
  detail::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), weight.dim(2),
                         weight.dim(3), stride, padding, 0, 0};
  g.out_h = detail::conv_extent(g.height, g.kernel_h, stride, padding);
  g.out_w = detail::conv_extent(g.width, g.kernel_w, stride, padding);
  const std::size_t in_size = g.channels * g.height * g.width;
  const std::size_t out_size = c_out * g.cols();

  std::vector<T> out(batch * out_size);
  std::vector<T> col(g.rows() * g.cols());
  const T* w = weight.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    detail::im2col(x.data().data() + b * in_size, g, col.data());
    T* y = out.data() + b * out_size;
    detail::gemm(false, false, c_out, g.cols(), g.rows(), w, col.data(), y, false);
    if (bias.defined()) {
      for (std::size_t c = 0; c < c_out; ++c) {
        const T bc = bias[c];
        for (std::size_t i = 0; i < g.cols(); ++i) y[c * g.cols() + i] += bc;
      }
    }
  }
  Tape<T>* tape = bias.defined() ? detail::tape_for<T>(x, weight, bias)
                                 : detail::tape_for<T>(x, weight);
  Tensor<T> result = detail::finish(Shape{batch, c_out, g.out_h, g.out_w},
                                    std::move(out), tape, "conv2d");
  if (tape) {
    auto bs = bias.defined() ? bias.storage() : nullptr;
    tape->record([xs = x.storage(), ws = weight.storage(), bs,
                  os = result.storage(), g, batch, c_out, in_size, out_size] {
      if (!detail::reached(os)) return;
      std::vector<T> col(g.rows() * g.cols());
      for (std::size_t b = 0; b < batch; ++b) {
        const T* go = os->grad.data() + b * out_size;
        if (ws->requires_grad) {
          detail::im2col(xs->data.data() + b * in_size, g, col.data());
          detail::gemm(false, true, c_out, g.rows(), g.cols(), go, col.data(),
                       ws->ensure_grad().data(), true);
        }
        if (xs->requires_grad) {
          detail::gemm(true, false, g.rows(), g.cols(), c_out, ws->data.data(),
                       go, col.data(), false);
          detail::col2im(col.data(), g, xs->ensure_grad().data() + b * in_size);
        }
        if (bs && bs->requires_grad) {
          auto& gb = bs->ensure_grad();
          for (std::size_t c = 0; c < c_out; ++c) {
            T acc = T(0);
            for (std::size_t i = 0; i < g.cols(); ++i) acc += go[c * g.cols() + i];
            gb[c] += acc;
          }
        }
      }
    });
  }
  return result;
}

/// Gradient-of-convolution (a.k.a. deconvolution). weight is
/// [c_in x c_out x kh x kw]; output extent is (in - 1) * stride
/// - 2 * padding + kernel.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight,
                           const Tensor<T>& bias, std::size_t stride,
                           std::size_t padding) {
  if (x.rank() != 4 || weight.rank() != 4) {
    throw DimensionError("conv_transpose2d expects 4-D input and weight");
  }
  if (x.dim(1) != weight.dim(0)) {
    throw DimensionError("conv_transpose2d channel mismatch: input " +
                         to_string(x.shape()) + ", weight " +
                         to_string(weight.shape()));
  }
  if (stride == 0) throw ConfigError("convolution stride must be positive");
  const std::size_t batch = x.dim(0);
  const std::size_t c_in = x.dim(1);
  const std::size_t c_out = weight.dim(1);
  const std::size_t kh = weight.dim(2), kw = weight.dim(3);
  detail::check_bias(bias, c_out, "conv_transpose2d");
  const std::size_t full_h = (x.dim(2) - 1) * stride + kh;
  const std::size_t full_w = (x.dim(3) - 1) * stride + kw;
  if (full_h <= 2 * padding || full_w <= 2 * padding) {
    throw DimensionError("conv_transpose2d output extent is not positive");
  }
  // Geometry of the forward convolution this operator is the adjoint of.
  detail::ConvGeometry g{c_out, full_h - 2 * padding, full_w - 2 * padding,
                         kh, kw, stride, padding, x.dim(2), x.dim(3)};
  const std::size_t in_size = c_in * g.cols();
  const std::size_t out_size = c_out * g.height * g.width;

  std::vector<T> out(batch * out_size, T(0));
  std::vector<T> col(g.rows() * g.cols());
  const T* w = weight.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    detail::gemm(true, false, g.rows(), g.cols(), c_in, w,
                 x.data().data() + b * in_size, col.data(), false);
    T* y = out.data() + b * out_size;
    detail::col2im(col.data(), g, y);
    if (bias.defined()) {
      const std::size_t plane = g.height * g.width;
      for (std::size_t c = 0; c < c_out; ++c) {
        const T bc = bias[c];
        for (std::size_t i = 0; i < plane; ++i) y[c * plane + i] += bc;
      }
    }
  }
  Tape<T>* tape = bias.defined() ? detail::tape_for<T>(x, weight, bias)
                                 : detail::tape_for<T>(x, weight);
  Tensor<T> result = detail::finish(Shape{batch, c_out, g.height, g.width},
                                    std::move(out), tape, "conv_transpose2d");
  if (tape) {
    auto bs = bias.defined() ? bias.storage() : nullptr;
    tape->record([xs = x.storage(), ws = weight.storage(), bs,
                  os = result.storage(), g, batch, c_in, c_out, in_size,
                  out_size] {
      if (!detail::reached(os)) return;
      std::vector<T> col(g.rows() * g.cols());
      const std::size_t plane = g.height * g.width;
      for (std::size_t b = 0; b < batch; ++b) {
        const T* go = os->grad.data() + b * out_size;
        detail::im2col(go, g, col.data());
        if (xs->requires_grad) {
          detail::gemm(false, false, c_in, g.cols(), g.rows(), ws->data.data(),
                       col.data(), xs->ensure_grad().data() + b * in_size, true);
        }
        if (ws->requires_grad) {
          detail::gemm(false, true, c_in, g.rows(), g.cols(),
                       xs->data.data() + b * in_size, col.data(),
                       ws->ensure_grad().data(), true);
        }
        if (bs && bs->requires_grad) {
          auto& gb = bs->ensure_grad();
          for (std::size_t c = 0; c < c_out; ++c) {
            T acc = T(0);
            for (std::size_t i = 0; i < plane; ++i) acc += go[c * plane + i];
            gb[c] += acc;
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Resampling.

namespace detail {

struct LerpTap {
  std::size_t lo, hi;
  double frac;
};

// Half-pixel-centre sampling positions, clamped at the borders.
inline std::vector<LerpTap> lerp_taps(std::size_t in, std::size_t out) {
  std::vector<LerpTap> taps(out);
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    const std::size_t hi = std::min(lo + 1, in - 1);
    taps[i] = {lo, hi, src - static_cast<double>(lo)};
  }
  return taps;
}

}  // namespace detail

/// Bilinear resize of the two trailing axes of x [... x h x w].
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, std::size_t out_h,
                          std::size_t out_w) {
  if (x.rank() < 2 || out_h == 0 || out_w == 0) {
    throw DimensionError("resize_bilinear needs rank >= 2 and positive extents");
  }
  const std::size_t in_h = x.dim(x.rank() - 2), in_w = x.dim(x.rank() - 1);
  const std::size_t planes = x.size() / (in_h * in_w);
  auto ty = std::make_shared<std::vector<detail::LerpTap>>(detail::lerp_taps(in_h, out_h));
  auto tx = std::make_shared<std::vector<detail::LerpTap>>(detail::lerp_taps(in_w, out_w));
  Shape shape = x.shape();
  shape[shape.size() - 2] = out_h;
  shape.back() = out_w;
  auto src = x.data();
  std::vector<T> out(planes * out_h * out_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* in = src.data() + p * in_h * in_w;
    T* dst = out.data() + p * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const auto& ry = (*ty)[oy];
      const T fy = static_cast<T>(ry.frac);
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        const auto& rx = (*tx)[ox];
        const T fx = static_cast<T>(rx.frac);
        const T top = (T(1) - fx) * in[ry.lo * in_w + rx.lo] + fx * in[ry.lo * in_w + rx.hi];
        const T bot = (T(1) - fx) * in[ry.hi * in_w + rx.lo] + fx * in[ry.hi * in_w + rx.hi];
        dst[oy * out_w + ox] = (T(1) - fy) * top + fy * bot;
      }
    }
  }
  Tape<T>* tape = detail::tape_for<T>(x);
  Tensor<T> result = detail::finish(std::move(shape), std::move(out), tape,
                                    "resize_bilinear");
  if (tape) {
    tape->record([xs = x.storage(), os = result.storage(), ty, tx, planes,
                  in_h, in_w, out_h, out_w] {
      if (!detail::reached(os) || !xs->requires_grad) return;
      auto& gx = xs->ensure_grad();
      for (std::size_t p = 0; p < planes; ++p) {
        T* g = gx.data() + p * in_h * in_w;
        const T* go = os->grad.data() + p * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
          const auto& ry = (*ty)[oy];
          const T fy = static_cast<T>(ry.frac);
          for (std::size_t ox = 0; ox < out_w; ++ox) {
            const auto& rx = (*tx)[ox];
            const T fx = static_cast<T>(rx.frac);
            const T v = go[oy * out_w + ox];
            g[ry.lo * in_w + rx.lo] += v * (T(1) - fy) * (T(1) - fx);
            g[ry.lo * in_w + rx.hi] += v * (T(1) - fy) * fx;
            g[ry.hi * in_w + rx.lo] += v * fy * (T(1) - fx);
            g[ry.hi * in_w + rx.hi] += v * fy * fx;
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Complementary masking.

namespace detail {

// k * f rounded to the ulp grid of f, so that f - result is exact.
template <typename T>
T grid_product(T k, T f) {
  const T x = k * f;
  if (f == T(0) || std::abs(f) < std::numeric_limits<T>::min() || !std::isfinite(f)) {
    return x;
  }
  const T ulp = std::ldexp(T(1), std::ilogb(f) - (std::numeric_limits<T>::digits - 1));
  return std::nearbyint(x / ulp) * ulp;
}

}  // namespace detail

/// Splits f [b x ...] into (mask * f, (1 - mask) * f) with mask [...] in
/// [0, 1] broadcast over the batch axis. The two parts sum back to f
/// exactly in floating point.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> complementary_split(const Tensor<T>& f,
                                                    const Tensor<T>& mask) {
  if (f.rank() < 1 || mask.rank() + 1 != f.rank() ||
      !std::equal(mask.shape().begin(), mask.shape().end(), f.shape().begin() + 1)) {
    throw DimensionError("complementary_split: mask " + to_string(mask.shape()) +
                         " does not match features " + to_string(f.shape()));
  }
  const std::size_t per = mask.size();
  const std::size_t batch = f.dim(0);
  auto fv = f.data();
  auto kv = mask.data();
  std::vector<T> kept(fv.size()), rest(fv.size());
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < per; ++i) {
      const std::size_t j = b * per + i;
      kept[j] = detail::grid_product(kv[i], fv[j]);
      rest[j] = fv[j] - kept[j];
    }
  }
  Tape<T>* tape = detail::tape_for<T>(f, mask);
  Tensor<T> a = detail::finish(f.shape(), std::move(kept), tape, "complementary_split");
  Tensor<T> r = detail::finish(f.shape(), std::move(rest), tape, "complementary_split");
  if (tape) {
    tape->record([fs = f.storage(), ks = mask.storage(), as = a.storage(),
                  rs = r.storage(), per, batch] {
      const bool ga_on = detail::reached(as), gr_on = detail::reached(rs);
      if (!ga_on && !gr_on) return;
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t i = 0; i < per; ++i) {
          const std::size_t j = b * per + i;
          const T g_kept = ga_on ? as->grad[j] : T(0);
          const T g_rest = gr_on ? rs->grad[j] : T(0);
          const T k = ks->data[i];
          if (fs->requires_grad) {
            fs->ensure_grad()[j] += g_kept * k + g_rest * (T(1) - k);
          }
          if (ks->requires_grad) {
            ks->ensure_grad()[i] += (g_kept - g_rest) * fs->data[j];
          }
        }
      }
    });
  }
  return {a, r};
}

}  // namespace dualgaze
