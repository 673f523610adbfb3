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
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dualgaze/errors.hpp"

namespace dualgaze {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace detail {

template <typename T>
struct TensorStorage {
  Shape shape;
  std::vector<T> data;
  // Empty until the first gradient contribution arrives.
  std::vector<T> grad;
  bool requires_grad = false;

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major n-dimensional array.
///
/// A Tensor is a shared handle: copies alias the same storage, which is what
/// lets the tape hand gradients back to parameters held by layers. Use
/// clone() for an independent copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Storage = detail::TensorStorage<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0))
      : storage_(std::make_shared<Storage>()) {
    storage_->data.assign(numel(shape), fill);
    storage_->shape = std::move(shape);
  }

  Tensor(Shape shape, std::vector<T> data)
      : storage_(std::make_shared<Storage>()) {
    if (numel(shape) != data.size()) {
      throw DimensionError("tensor shape " + to_string(shape) + " needs " +
                           std::to_string(numel(shape)) + " values, got " +
                           std::to_string(data.size()));
    }
    storage_->shape = std::move(shape);
    storage_->data = std::move(data);
  }

  Tensor(Shape shape, std::initializer_list<T> values)
      : Tensor(std::move(shape), std::vector<T>(values)) {}

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), T(1)); }
  static Tensor scalar(T value) { return Tensor(Shape{}, value); }

  bool defined() const { return storage_ != nullptr; }

  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= rank()) {
      throw DimensionError("axis " + std::to_string(axis) +
                           " out of range for shape " + to_string(shape()));
    }
    return storage_->shape[axis];
  }
  std::size_t size() const { return storage_->data.size(); }

  std::span<const T> data() const { return storage_->data; }
  /// Direct write access; reserved for initialization, data loading and the
  /// optimizer step, never for values already recorded on a tape.
  std::span<T> mutable_data() { return storage_->data; }

  T operator[](std::size_t i) const { return storage_->data[i]; }

  T at(std::initializer_list<std::size_t> index) const {
    return storage_->data[offset(index)];
  }

  T item() const {
    if (size() != 1) {
      throw UsageError("item() on tensor of shape " + to_string(shape()));
    }
    return storage_->data[0];
  }

  bool requires_grad() const { return storage_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    storage_->requires_grad = on;
    return *this;
  }

  bool has_grad() const { return !storage_->grad.empty(); }

  /// Gradient accumulated by the last backward pass; zeros if none arrived.
  std::span<const T> grad() const { return storage_->ensure_grad(); }
  std::span<T> mutable_grad() { return storage_->ensure_grad(); }
  void zero_grad() { storage_->grad.clear(); }

  /// Copy of the values with no gradient tracking.
  Tensor clone() const {
    return Tensor(storage_->shape, storage_->data);
  }

  const std::shared_ptr<Storage>& storage() const { return storage_; }

  bool same_storage(const Tensor& other) const {
    return storage_ == other.storage_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const {
    if (index.size() != rank()) {
      throw DimensionError("index rank mismatch for shape " +
                           to_string(shape()));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
      if (i >= storage_->shape[axis]) {
        throw DimensionError("index out of range for shape " +
                             to_string(shape()));
      }
      off = off * storage_->shape[axis] + i;
      ++axis;
    }
    return off;
  }

  std::shared_ptr<Storage> storage_;
};

template <typename T>
bool all_finite(std::span<const T> values) {
  return std::all_of(values.begin(), values.end(),
                     [](T v) { return std::isfinite(v); });
}

}  // namespace dualgaze
