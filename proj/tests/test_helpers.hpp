// Shared fixtures for the unit tests.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "dualgaze/ops.hpp"
#include "dualgaze/random.hpp"
#include "dualgaze/tape.hpp"
#include "dualgaze/tensor.hpp"

namespace dualgaze::testing {

inline Tensor<double> random_tensor(Shape shape, std::uint64_t seed,
                                    double lo = -1.0, double hi = 1.0) {
  Rng rng(mix64(seed));
  Tensor<double> t(std::move(shape));
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

inline Tensor<double> tracked(Tensor<double> t) {
  t.set_requires_grad(true);
  return t;
}

// Scalar reduction with fixed random weights so every output coordinate
// contributes a distinct gradient.
inline Tensor<double> weighted_sum(const Tensor<double>& y, std::uint64_t seed) {
  return sum(mul(y, random_tensor(y.shape(), seed)));
}

// Records f() on a fresh tape and runs backward from its result.
template <typename F>
Tensor<double> backprop(F&& f) {
  Tape<double> tape;
  Tensor<double> loss;
  {
    TapeScope<double> scope(tape);
    loss = f();
  }
  tape.backward(loss);
  return loss;
}

// Owning copy; safe to iterate when the tensor is a temporary.
inline std::vector<double> values(const Tensor<double>& t) {
  return {t.data().begin(), t.data().end()};
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace dualgaze::testing
