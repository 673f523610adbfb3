#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dualgaze/gradcheck.hpp"
#include "dualgaze/nn.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

namespace dualgaze {
namespace {

using testing::random_tensor;
using testing::tracked;
using testing::weighted_sum;
using Td = Tensor<double>;

// Direct sliding-window cross-correlation.
TEST(Conv2d, ClosedForms) {
  const Td ones = Td::ones({1, 1, 2, 2});
  const Td twos = conv2d(ones, Td({1, 1, 1, 1}, {2.0}), Td({1}, {0.0}), 1, 0);
  for (double v : twos.data()) EXPECT_EQ(v, 2.0);
  const Td nine = conv2d(Td::ones({1, 1, 3, 3}), Td::ones({1, 1, 3, 3}), Td(), 1, 0);
  ASSERT_EQ(nine.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(nine[0], 9.0);
}

TEST(Conv2d, AgreesWithSlidingWindowOracle) {
  struct Case { std::size_t n, ci, co, h, w, k, stride, pad; };
  const Case cases[] = {{2, 3, 4, 8, 8, 3, 1, 1}, {2, 3, 2, 8, 8, 3, 2, 1}, {1, 2, 3, 7, 5, 1, 1, 0},
                        {2, 2, 1, 5, 5, 7, 1, 3}, {1, 3, 2, 6, 8, 4, 2, 0}};
  std::uint64_t seed = 0;
  for (const Case& c : cases) {
    const Td x = random_tensor({c.n, c.ci, c.h, c.w}, ++seed);
    const Td w = random_tensor({c.co, c.ci, c.k, c.k}, ++seed);
    const Td b = random_tensor({c.co}, ++seed);
    const Td y = conv2d(x, w, b, c.stride, c.pad);
    const Td ref = oracle::conv2d(x, w, b, c.stride, c.pad);
    ASSERT_EQ(y.shape(), ref.shape());
    EXPECT_LT(testing::max_abs_diff(y.data(), ref.data()), 1e-10);
  }
}

TEST(Conv2d, RejectsBadShapes) {
  const Td x = random_tensor({1, 3, 4, 4}, 1);
  EXPECT_THROW(conv2d(x, random_tensor({2, 2, 3, 3}, 2), Td(), 1, 1), DimensionError);
  EXPECT_THROW(conv2d(x, random_tensor({2, 3, 7, 7}, 2), Td(), 1, 0), DimensionError);
  EXPECT_THROW(conv2d(random_tensor({3, 4, 4}, 1), random_tensor({2, 3, 3, 3}, 2), Td(), 1, 1),
               DimensionError);
}

TEST(Conv2d, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Td x = tracked(random_tensor({2, 2, 5, 4}, seed));
    Td w = tracked(random_tensor({3, 2, 3, 3}, seed + 20));
    Td b = tracked(random_tensor({3}, seed + 40));
    const std::size_t stride = 1 + seed % 2;
    auto f = [&] { return weighted_sum(conv2d(x, w, b, stride, 1), seed); };
    EXPECT_LT(finite_diff_check<double>(f, {x, w, b}).max_error, 1e-8) << "seed " << seed;
  }
}

TEST(ConvTranspose2d, ClosedForms) {
  const Td y = conv_transpose2d(Td({1, 1, 1, 1}, {3.0}), Td::ones({1, 1, 2, 2}), Td(), 2, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 3.0);
  Rng rng(1);
  Conv2d<double> down(3, 5, 4, 2, 1, rng);
  ConvTranspose2d<double> up(5, 3, 4, 2, 1, rng);
  const Td x = random_tensor({2, 3, 8, 6}, 3);
  EXPECT_EQ(up(down(x)).shape(), x.shape());
}

TEST(ConvTranspose2d, IsTheAdjointOfConv2d) {
  // <conv(x; w), y> = <x, convT(y; w)> for every x, y: the transpose is the
  // input-gradient of the convolution.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t stride = 1 + seed % 2, pad = seed % 3 == 0 ? 0 : 1;
    const Td w = random_tensor({4, 3, 3, 3}, seed);
    Td x = tracked(random_tensor({2, 3, 7, 6}, seed + 10));
    const Td conv_shape = conv2d(x, w, Td(), stride, pad);
    const Td y = random_tensor(conv_shape.shape(), seed + 20);
    testing::backprop([&] { return sum(mul(conv2d(x, w, Td(), stride, pad), y)); });
    const Td t = conv_transpose2d(y, w, Td(), stride, pad);
    // convT may produce a larger extent when stride does not divide exactly;
    // the input gradient covers the overlapping window.
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 7 && i < t.dim(2); ++i)
          for (std::size_t j = 0; j < 6 && j < t.dim(3); ++j)
            EXPECT_NEAR(t.at({n, c, i, j}), x.grad()[((n * 3 + c) * 7 + i) * 6 + j], 1e-12);
  }
}

TEST(ConvTranspose2d, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Td x = tracked(random_tensor({2, 3, 3, 2}, seed));
    Td w = tracked(random_tensor({3, 2, 4, 4}, seed + 20));
    Td b = tracked(random_tensor({2}, seed + 40));
    auto f = [&] { return weighted_sum(conv_transpose2d(x, w, b, 2, 1), seed); };
    EXPECT_LT(finite_diff_check<double>(f, {x, w, b}).max_error, 1e-8) << "seed " << seed;
  }
}

TEST(Pooling, ClosedForms) {
  const Td x({1, 1, 2, 2}, {1.0, 3.0, 5.0, 7.0});
  EXPECT_EQ(global_avg_pool(x)[0], 4.0);
  EXPECT_EQ(global_max_pool(x)[0], 7.0);
  const Td c({2, 3, 4, 5}, 1.25);
  for (double v : testing::values(global_avg_pool(c))) EXPECT_EQ(v, 1.25);
  for (double v : testing::values(global_max_pool(c))) EXPECT_EQ(v, 1.25);
  for (double v : testing::values(channel_mean(c))) EXPECT_EQ(v, 1.25);
  for (double v : testing::values(channel_max(c))) EXPECT_EQ(v, 1.25);
  const Td two({1, 2, 1, 1}, {2.0, 4.0});
  EXPECT_EQ(channel_mean(two)[0], 3.0);
  EXPECT_EQ(channel_max(two)[0], 4.0);
  const Td single = random_tensor({2, 1, 3, 3}, 5);
  for (std::size_t i = 0; i < single.size(); ++i) {
    EXPECT_EQ(channel_mean(single)[i], single[i]);
    EXPECT_EQ(channel_max(single)[i], single[i]);
  }
}

TEST(Pooling, ChannelReductionsAgreeWithPixelLoops) {
  const Td x = random_tensor({2, 5, 3, 4}, 6);
  const Td m = channel_mean(x), mx = channel_max(x);
  ASSERT_EQ(m.shape(), (Shape{2, 1, 3, 4}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) {
        double s = 0.0, best = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < 5; ++c) {
          s += x.at({n, c, i, j});
          best = std::max(best, x.at({n, c, i, j}));
        }
        EXPECT_NEAR(m.at({n, 0, i, j}), s / 5.0, 1e-15);
        EXPECT_EQ(mx.at({n, 0, i, j}), best);
      }
}

TEST(Pooling, MaxGradientGoesToFirstArgmax) {
  Td x = tracked(Td({1, 1, 2, 2}, {2.0, 7.0, 7.0, 1.0}));
  testing::backprop([&] { return sum(global_max_pool(x)); });
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 1.0);
  EXPECT_EQ(x.grad()[2], 0.0);
}

TEST(Pooling, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Td x = tracked(random_tensor({2, 3, 3, 3}, seed));
    auto f = [&] {
      const Td g = concat<double>({global_avg_pool(x), global_max_pool(x)}, 1);
      const Td s = concat<double>({channel_mean(x), channel_max(x)}, 1);
      return add(weighted_sum(g, seed), weighted_sum(s, seed + 1));
    };
    EXPECT_LT(finite_diff_check<double>(f, std::vector<Td>{x}, {.eps = 1e-6}).max_error, 1e-6);
  }
}

TEST(Linear, ClosedForms) {
  const Td x = random_tensor({3, 4}, 1);
  const Td eye({4, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1});
  const Td y = linear(x, eye, Td::zeros({4}));
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_EQ(y[i], x[i]);
  const Td s = linear(x, Td::ones({1, 4}), Td::zeros({1}));
  for (std::size_t r = 0; r < 3; ++r)
    EXPECT_NEAR(s[r], x.at({r, 0}) + x.at({r, 1}) + x.at({r, 2}) + x.at({r, 3}), 1e-15);
  EXPECT_THROW(linear(x, Td::ones({2, 3}), Td::zeros({2})), DimensionError);
}

TEST(Linear, AgreesWithMatmulAndActsOnLastAxis) {
  const Td x = random_tensor({2, 3, 5}, 2);
  const Td w = random_tensor({4, 5}, 3);
  const Td b = random_tensor({4}, 4);
  const Td y = linear(x, w, b);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 4}));
  const Td ref = add(matmul(reshape(x, {6, 5}), transpose(w)), reshape(b, {1, 4}));
  EXPECT_LT(testing::max_abs_diff(y.data(), ref.data()), 1e-12);
}

TEST(Linear, MlpGradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Mlp<double> mlp(6, 3, 6, rng);
    Td x = tracked(random_tensor({4, 6}, seed + 9));
    auto f = [&] { return weighted_sum(mlp(x), seed); };
    EXPECT_LT(finite_diff_check<double>(f, {x, mlp.first.weight, mlp.first.bias,
                                            mlp.second.weight, mlp.second.bias},
                                        {.eps = 1e-6})
                  .max_error,
              1e-5);
  }
}

TEST(Init, DeterministicBoundedAndCentered) {
  Rng a(42), b(42);
  const Conv2d<double> ca(8, 16, 3, 1, 1, a), cb(8, 16, 3, 1, 1, b);
  for (std::size_t i = 0; i < ca.weight.size(); ++i) EXPECT_EQ(ca.weight[i], cb.weight[i]);
  for (double v : ca.bias.data()) EXPECT_EQ(v, 0.0);
  const double bound = std::sqrt(1.0 / 72.0);
  for (double v : ca.weight.data()) EXPECT_LE(std::abs(v), bound);

  Rng rng(7);
  const Linear<double> big(10000, 1, rng);
  const double bl = std::sqrt(1.0 / 10000.0);
  double mean = 0.0;
  for (double v : big.weight.data()) {
    EXPECT_LE(std::abs(v), bl);
    mean += v;
  }
  mean /= 10000.0;
  // U(-b, b) has standard deviation b / sqrt(3).
  EXPECT_LT(std::abs(mean), 3.0 * (bl / std::sqrt(3.0)) / std::sqrt(10000.0));
}

TEST(Layers, SampleOutputsDoNotDependOnBatchComposition) {
  Rng rng(3);
  const Conv2d<double> conv(3, 4, 3, 2, 1, rng);
  const Linear<double> lin(12, 5, rng);
  const Td x = random_tensor({5, 3, 6, 6}, 8);
  const Td full = conv(x);
  const Td one = conv(slice(x, 0, 3, 1));
  for (std::size_t i = 0; i < one.size(); ++i) EXPECT_EQ(one[i], full[3 * one.size() + i]);
  const Td v = random_tensor({7, 12}, 9);
  const Td lf = lin(v);
  const Td l1 = lin(slice(v, 0, 6, 1));
  for (std::size_t i = 0; i < l1.size(); ++i) EXPECT_EQ(l1[i], lf[6 * l1.size() + i]);
}

}  // namespace
}  // namespace dualgaze
