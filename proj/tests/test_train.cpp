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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dualgaze/gradcheck_suite.hpp"
#include "dualgaze/synth.hpp"
#include "dualgaze/train.hpp"
#include "oracles.hpp"
#include "test_helpers.hpp"

namespace dualgaze {
namespace {

using testing::values;

DatasetSpec tiny_data(std::size_t count, std::uint64_t seed = 3) {
  const ModelConfig m = tiny_model_config();
  DatasetSpec s;
  s.seed = seed;
  s.count = count;
  s.face_height = m.face_height;
  s.face_width = m.face_width;
  s.eye_height = m.eye_height;
  s.eye_width = m.eye_width;
  return s;
}

TrainConfig tiny_train(std::size_t epochs) {
  TrainConfig t;
  t.epochs = epochs;
  t.milestones = {1};
  return t;
}

using oracle::ScalarAdamW;

TEST(MultistepLr, ReferenceSchedule) {
  const std::vector<std::size_t> ms{10, 25};
  EXPECT_DOUBLE_EQ(multistep_lr(0, 1e-4, ms, 0.1), 1e-4);
  EXPECT_DOUBLE_EQ(multistep_lr(9, 1e-4, ms, 0.1), 1e-4);
  EXPECT_DOUBLE_EQ(multistep_lr(10, 1e-4, ms, 0.1), 1e-5);
  EXPECT_DOUBLE_EQ(multistep_lr(24, 1e-4, ms, 0.1), 1e-5);
  EXPECT_DOUBLE_EQ(multistep_lr(25, 1e-4, ms, 0.1), 1e-6);
}

TEST(MultistepLr, MatchesClosedFormAtEveryEpoch) {
  const TrainConfig c;
  for (std::size_t e = 0; e < 40; ++e) {
    const int passed = (e >= 8) + (e >= 15);
    EXPECT_DOUBLE_EQ(multistep_lr(e, c.base_lr, c.milestones, c.lr_gamma),
                     c.base_lr * std::pow(c.lr_gamma, passed))
        << e;
  }
  EXPECT_DOUBLE_EQ(multistep_lr(3, 0.5, {}, 0.1), 0.5);
}

TEST(AdamWUpdate, FirstStepMovesByLearningRate) {
  std::vector<double> w{1.0}, g{1.0}, m{0.0}, v{0.0};
  adamw_update<double>(w, g, m, v, 1, 0.1, {0.9, 0.999, 1e-8, 0.0});
  EXPECT_NEAR(w[0], 0.9, 1e-8);
  EXPECT_NEAR(m[0], 0.1, 1e-15);
  EXPECT_NEAR(v[0], 0.001, 1e-15);
}

TEST(AdamWUpdate, ZeroGradientFixedPointAndDecoupledDecay) {
  std::vector<double> w{1.5, -2.0, 0.25}, g(3, 0.0), m(3, 0.0), v(3, 0.0);
  const auto w0 = w;
  for (std::uint64_t s = 1; s <= 5; ++s) adamw_update<double>(w, g, m, v, s, 0.1, {0.9, 0.999, 1e-8, 0.0});
  EXPECT_EQ(w, w0);
  adamw_update<double>(w, g, m, v, 6, 0.1, {0.9, 0.999, 1e-8, 0.01});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(w[i], w0[i] * (1 - 0.1 * 0.01), 1e-15);
}

TEST(AdamWUpdate, MatchesScalarReferenceOverRandomSteps) {
  Rng rng(17);
  const AdamWSettings s{0.9, 0.999, 1e-8, 1e-2};
  for (int trial = 0; trial < 10; ++trial) {
    ScalarAdamW ref;
    double w_ref = rng.uniform(-2, 2);
    std::vector<double> w{w_ref}, m{0.0}, v{0.0};
    for (std::uint64_t step = 1; step <= 100; ++step) {
      const double g = rng.uniform(-3, 3);
      const double lr = rng.uniform(1e-4, 1e-1);
      w_ref = ref.step(w_ref, g, lr, s.beta1, s.beta2, s.eps, s.weight_decay);
      std::vector<double> gv{g};
      adamw_update<double>(w, gv, m, v, step, lr, s);
      ASSERT_NEAR(w[0], w_ref, 1e-12) << "step " << step;
    }
  }
}

TEST(AdamWUpdate, RejectsMisuse) {
  std::vector<double> w{1.0}, g{1.0, 2.0}, m{0.0}, v{0.0};
  EXPECT_THROW(adamw_update<double>(w, g, m, v, 1, 0.1, {}), DimensionError);
  std::vector<double> g1{1.0};
  EXPECT_THROW(adamw_update<double>(w, g1, m, v, 0, 0.1, {}), UsageError);
}

TEST(AdamW, StepsEveryParameterAndClearsGradients) {
  Tensor<double> a = make_parameter<double>({2, 2}), b = make_parameter<double>({3});
  AdamW<double> opt({{"a", a}, {"b", b}}, {0.9, 0.999, 1e-8, 0.0});
  testing::backprop([&] { return add(sum(a), scale(sum(b), -1.0)); });
  opt.step(0.1);
  EXPECT_EQ(opt.steps(), 1u);
  for (double x : values(a)) EXPECT_NEAR(x, -0.1, 1e-8);
  for (double x : values(b)) EXPECT_NEAR(x, 0.1, 1e-8);
  EXPECT_FALSE(a.has_grad());
  EXPECT_EQ(opt.first_moments()[0].size(), 4u);
  EXPECT_EQ(opt.second_moments()[1].size(), 3u);
}

TEST(EpochOrder, PermutationDependingOnSeedAndEpoch) {
  const auto a = epoch_order(50, 7, 0);
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> iota(50);
  std::iota(iota.begin(), iota.end(), std::size_t{0});
  EXPECT_EQ(sorted, iota);
  EXPECT_EQ(a, epoch_order(50, 7, 0));
  EXPECT_NE(a, epoch_order(50, 7, 1));
  EXPECT_NE(a, epoch_order(50, 8, 0));
}

TEST(Batch, StacksSamples) {
  const auto d = dataset_generate<float>(tiny_data(6));
  const std::vector<std::size_t> idx{4, 1};
  const Batch<float> b = make_batch<float>(d.train, idx);
  EXPECT_EQ(b.size(), 2u);
  EXPECT_EQ(b.face.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(b.mid.shape(), (Shape{2, 3, d.train[0].region_mid.dim(1), 32}));
  EXPECT_EQ(b.truth.at({0, 1}), static_cast<float>(d.train[4].truth.yaw));
  EXPECT_EQ(b.truth.at({1, 0}), static_cast<float>(d.train[1].truth.pitch));
  EXPECT_TRUE(std::equal(d.train[1].eye_left.data().begin(), d.train[1].eye_left.data().end(),
                         b.eye_left.data().begin() + d.train[1].eye_left.size()));
  EXPECT_THROW(make_batch<float>(d.train, std::vector<std::size_t>{}), UsageError);
}

TEST(Trainer, OneEpochOf32SamplesWithBatch16IsTwoSteps) {
  const auto d = dataset_generate<float>(tiny_data(32));
  ASSERT_EQ(d.train.size() + d.test.size(), 32u);
  std::vector<GazeSample<float>> all = d.train;
  all.insert(all.end(), d.test.begin(), d.test.end());
  Trainer<float> trainer(tiny_model_config(), tiny_train(1));
  std::size_t steps = 0;
  trainer.on_step = [&](const ForwardOutput<float>&) { ++steps; };
  trainer.fit(all, {});
  EXPECT_EQ(steps, 2u);
  EXPECT_EQ(trainer.optimizer().steps(), 2u);
  EXPECT_EQ(trainer.state().step, 2u);
  EXPECT_EQ(trainer.state().epoch, 1u);
}

TEST(Trainer, FollowsScheduleAndIsDeterministic) {
  const auto d = dataset_generate<float>(tiny_data(20));
  auto run = [&] {
    Trainer<float> t(tiny_model_config(), tiny_train(2));
    std::vector<std::string> rows;
    for (const auto& m : t.fit(d.train, d.test)) rows.push_back(metrics_row(m));
    return std::pair{rows, t.fit(d.train, d.test).size()};
  };
  const auto [a, extra] = run();
  const auto [b, _] = run();
  EXPECT_EQ(a, b);
  EXPECT_EQ(extra, 0u);
  ASSERT_EQ(a.size(), 2u);
  EXPECT_TRUE(a[0].starts_with("1,0.001,"));
  EXPECT_TRUE(a[1].starts_with("2,0.0001"));
}

TEST(Trainer, RejectsEmptyTrainingSet) {
  Trainer<float> t(tiny_model_config(), tiny_train(1));
  EXPECT_THROW(t.fit({}, {}), UsageError);
}

TEST(Trainer, AbortsOnNonFiniteLoss) {
  auto d = dataset_generate<double>(tiny_data(4));
  d.train[0].face.mutable_data()[5] = std::numeric_limits<double>::quiet_NaN();
  Trainer<double> t(tiny_model_config(), tiny_train(1));
  EXPECT_THROW(t.fit(d.train, {}), NumericError);
}

TEST(Evaluate, OracleInjectionAndOrderInvariance) {
  const auto d = dataset_generate<double>(tiny_data(12));
  const auto perfect = detail::evaluate_with(d.train, [&](std::size_t i) { return d.train[i].truth; });
  EXPECT_EQ(perfect.mean_error_deg, 0.0);

  GazeModel<double> model(tiny_model_config(), 4);
  const auto params_before = model.parameters();
  std::vector<std::vector<double>> before;
  for (const auto& p : params_before) before.push_back(values(p.tensor));
  const auto r = evaluate(model, d.train, 3);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(values(params_before[i].tensor), before[i]);
  EXPECT_EQ(r.samples.size(), d.train.size());
  EXPECT_EQ(evaluate(model, d.train, 50).mean_error_deg, r.mean_error_deg);

  auto reversed = d.train;
  std::reverse(reversed.begin(), reversed.end());
  EXPECT_NEAR(evaluate(model, reversed).mean_error_deg, r.mean_error_deg, 1e-12);
  EXPECT_THROW(evaluate(model, {}), UsageError);
}

TEST(Evaluate, ConstantBaselineMatchesMonteCarloOracle) {
  // Only the labels matter for the constant predictor.
  DatasetSpec spec;
  spec.count = 20000;
  std::vector<GazeSample<double>> samples;
  double brute = 0.0;
  for (const auto& r : dataset_recipes(spec)) {
    GazeSample<double> s;
    s.truth = r.truth;
    s.recipe = r;
    samples.push_back(s);
    // Angle to the forward axis: acos of the z component.
    brute += degrees(std::acos(std::cos(r.truth.pitch) * std::cos(r.truth.yaw)));
  }
  brute /= static_cast<double>(samples.size());
  const double mc = evaluate_constant(samples).mean_error_deg;
  EXPECT_NEAR(mc, brute, 1e-9);

  // Midpoint quadrature of the same expectation over the +-25 degree square.
  const int n = 400;
  double quad = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double p = radians(-25.0 + 50.0 * (i + 0.5) / n);
      const double y = radians(-25.0 + 50.0 * (j + 0.5) / n);
      quad += degrees(std::acos(std::cos(p) * std::cos(y)));
    }
  quad /= n * n;
  // Angles lie in [0, 36]; the sample standard deviation is below 8.
  EXPECT_NEAR(mc, quad, 3.0 * 8.0 / std::sqrt(20000.0));
}

TEST(Metrics, HeaderAndRowFormat) {
  EXPECT_STREQ(kMetricsHeader, "epoch,lr,Lg,L1,L2,test_angular_error_deg");
  EpochMetrics m{3, 0.001, 0.5, 0.25, 0.125, 7.5};
  EXPECT_EQ(metrics_row(m), "3,0.001,0.5,0.25,0.125,7.5");
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(c.validate());
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.base_lr = -1.0;
  EXPECT_THROW(Trainer<float>(tiny_model_config(), c), ConfigError);
}

}  // namespace
}  // namespace dualgaze
