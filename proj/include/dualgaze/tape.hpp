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
#include <functional>
#include <utility>
#include <vector>

#include "dualgaze/errors.hpp"
#include "dualgaze/tensor.hpp"

namespace dualgaze {

/// Reverse-mode recording of the operations executed while the tape is
/// active on the current thread.
///
/// Nodes are appended as operations run, so the list is already in
/// topological order. A tape supports exactly one backward pass.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void()>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(BackwardFn fn) {
    if (consumed_) throw UsageError("recording onto a consumed tape");
    nodes_.push_back(std::move(fn));
  }

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  /// Propagates d(loss)/d(.) into every tracked tensor reachable from loss.
  void backward(const Tensor<T>& loss) {
    if (consumed_) throw UsageError("backward called twice on the same tape");
    if (!loss.defined() || loss.size() != 1) {
      throw UsageError("backward needs a scalar loss, got shape " +
                       (loss.defined() ? to_string(loss.shape())
                                       : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) {
      throw UsageError("loss is not connected to any tracked tensor");
    }
    consumed_ = true;
    loss.storage()->ensure_grad()[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    nodes_.clear();
    nodes_.shrink_to_fit();
  }

 private:
  std::vector<BackwardFn> nodes_;
  bool consumed_ = false;
};

namespace detail {

template <typename T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

}  // namespace detail

/// Makes a tape the recording target for the current thread.
template <typename T>
class TapeScope {
 public:
  explicit TapeScope(Tape<T>& tape) : previous_(detail::active_tape<T>()) {
    detail::active_tape<T>() = &tape;
  }
  ~TapeScope() { detail::active_tape<T>() = previous_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<T>* previous_;
};

/// Suspends recording for the current thread (evaluation passes).
template <typename T>
class NoGradScope {
 public:
  NoGradScope() : previous_(detail::active_tape<T>()) {
    detail::active_tape<T>() = nullptr;
  }
  ~NoGradScope() { detail::active_tape<T>() = previous_; }
  NoGradScope(const NoGradScope&) = delete;
  NoGradScope& operator=(const NoGradScope&) = delete;

 private:
  Tape<T>* previous_;
};

namespace detail {

/// The active tape if any of the inputs is tracked, otherwise null.
template <typename T, typename... Ts>
Tape<T>* tape_for(const Ts&... inputs) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) return nullptr;
  bool tracked = (... || inputs.requires_grad());
  return tracked ? tape : nullptr;
}

template <typename T>
Tape<T>* tape_for_list(const std::vector<Tensor<T>>& inputs) {
  Tape<T>* tape = active_tape<T>();
  if (tape == nullptr) return nullptr;
  for (const auto& t : inputs) {
    if (t.requires_grad()) return tape;
  }
  return nullptr;
}

}  // namespace detail

}  // namespace dualgaze
