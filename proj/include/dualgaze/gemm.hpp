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

#include <Eigen/Core>

namespace dualgaze::detail {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// c (m x n) = [c +] op(a) * op(b), all row-major; op is an optional
/// transpose. a is (m x k) or, transposed, (k x m); likewise b.
///
/// Results are reproducible for a fixed (m, n, k) but not across shapes, so
/// callers keep per-sample shapes independent of the batch size.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const T* a, const T* b, T* c, bool accumulate) {
  using Map = Eigen::Map<RowMatrix<T>>;
  using ConstMap = Eigen::Map<const RowMatrix<T>>;
  const auto em = static_cast<Eigen::Index>(m);
  const auto en = static_cast<Eigen::Index>(n);
  const auto ek = static_cast<Eigen::Index>(k);
  Map out(c, em, en);
  if (!accumulate) out.setZero();
  if (!trans_a && !trans_b) {
    out.noalias() += ConstMap(a, em, ek) * ConstMap(b, ek, en);
  } else if (trans_a && !trans_b) {
    out.noalias() += ConstMap(a, ek, em).transpose() * ConstMap(b, ek, en);
  } else if (!trans_a && trans_b) {
    out.noalias() += ConstMap(a, em, ek) * ConstMap(b, en, ek).transpose();
  } else {
    out.noalias() +=
        ConstMap(a, ek, em).transpose() * ConstMap(b, en, ek).transpose();
  }
}

}  // namespace dualgaze::detail
