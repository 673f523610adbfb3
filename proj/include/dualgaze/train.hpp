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
#include <cstdint>
#include <functional>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dualgaze/errors.hpp"
#include "dualgaze/losses.hpp"
#include "dualgaze/model.hpp"
#include "dualgaze/random.hpp"
#include "dualgaze/synth.hpp"
#include "dualgaze/tape.hpp"
#include "dualgaze/tensor.hpp"

namespace dualgaze {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double base_lr = 1e-3;
  double lr_gamma = 0.1;
  std::vector<std::size_t> milestones{8, 15};
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
  std::uint64_t seed = 7;

  bool operator==(const TrainConfig&) const = default;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (!(lr_gamma > 0.0)) throw ConfigError("lr_gamma must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("Adam betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("eps must be positive");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
  }
};

/// base_lr * gamma^(number of milestones <= epoch); epochs count from 0.
inline double multistep_lr(std::size_t epoch, double base_lr,
                           const std::vector<std::size_t>& milestones, double gamma) {
  double lr = base_lr;
  for (std::size_t m : milestones) {
    if (m <= epoch) lr *= gamma;
  }
  return lr;
}

struct AdamWSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

/// One AdamW update of a flat parameter block; step counts from 1. Weight
/// decay shrinks the parameter before the bias-corrected adaptive step.
template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m,
                  std::span<T> v, std::uint64_t step, double lr, const AdamWSettings& s) {
  if (grad.size() != param.size() || m.size() != param.size() || v.size() != param.size()) {
    throw DimensionError("adamw_update: parameter, gradient and moment sizes differ");
  }
  if (step == 0) throw UsageError("adamw_update: step counts from 1");
  const double bc1 = 1.0 - std::pow(s.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(s.beta2, static_cast<double>(step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    double p = param[i];
    p -= lr * s.weight_decay * p;
    const double mi = s.beta1 * m[i] + (1.0 - s.beta1) * g;
    const double vi = s.beta2 * v[i] + (1.0 - s.beta2) * g * g;
    m[i] = static_cast<T>(mi);
    v[i] = static_cast<T>(vi);
    const double m_hat = static_cast<double>(m[i]) / bc1;
    const double v_hat = static_cast<double>(v[i]) / bc2;
    p -= lr * m_hat / (std::sqrt(v_hat) + s.eps);
    param[i] = static_cast<T>(p);
  }
}

/// AdamW over a named parameter list; owns the moment buffers.
template <typename T>
class AdamW {
 public:
  AdamW() = default;
  AdamW(ParameterList<T> params, const AdamWSettings& settings)
      : params_(std::move(params)), settings_(settings) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.size(), T(0));
      v_.emplace_back(p.tensor.size(), T(0));
    }
  }

  /// Applies one update from the accumulated gradients and clears them.
  void step(double lr) {
    ++steps_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Tensor<T>& p = params_[i].tensor;
      const std::vector<T> g(p.grad().begin(), p.grad().end());
      adamw_update<T>(p.mutable_data(), g, m_[i], v_[i], steps_, lr, settings_);
      p.zero_grad();
    }
  }

  const ParameterList<T>& parameters() const { return params_; }
  const AdamWSettings& settings() const { return settings_; }
  std::uint64_t steps() const { return steps_; }
  void set_steps(std::uint64_t s) { steps_ = s; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }

 private:
  ParameterList<T> params_;
  AdamWSettings settings_;
  std::vector<std::vector<T>> m_, v_;
  std::uint64_t steps_ = 0;
};

// ---------------------------------------------------------------------------

template <typename T>
struct Batch {
  Tensor<T> face, eye_left, eye_right;
  Tensor<T> top, mid, bot;
  Tensor<T> truth;  // [b x 2]
  std::size_t size() const { return truth.dim(0); }
};

namespace detail {
template <typename T, typename Get>
Tensor<T> stack(const std::vector<GazeSample<T>>& samples,
                std::span<const std::size_t> indices, Get get) {
  const Tensor<T>& first = get(samples[indices[0]]);
  Shape shape{indices.size()};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  std::vector<T> data;
  data.reserve(numel(shape));
  for (std::size_t i : indices) {
    const auto v = get(samples[i]).data();
    data.insert(data.end(), v.begin(), v.end());
  }
  return Tensor<T>(std::move(shape), std::move(data));
}
}  // namespace detail

template <typename T>
Batch<T> make_batch(const std::vector<GazeSample<T>>& samples,
                    std::span<const std::size_t> indices) {
  if (indices.empty()) throw UsageError("empty batch");
  Batch<T> b;
  b.face = detail::stack(samples, indices, [](const auto& s) -> const Tensor<T>& { return s.face; });
  b.eye_left = detail::stack(samples, indices, [](const auto& s) -> const Tensor<T>& { return s.eye_left; });
  b.eye_right = detail::stack(samples, indices, [](const auto& s) -> const Tensor<T>& { return s.eye_right; });
  b.top = detail::stack(samples, indices, [](const auto& s) -> const Tensor<T>& { return s.region_top; });
  b.mid = detail::stack(samples, indices, [](const auto& s) -> const Tensor<T>& { return s.region_mid; });
  b.bot = detail::stack(samples, indices, [](const auto& s) -> const Tensor<T>& { return s.region_bot; });
  std::vector<T> truth;
  for (std::size_t i : indices) {
    truth.push_back(static_cast<T>(samples[i].truth.pitch));
    truth.push_back(static_cast<T>(samples[i].truth.yaw));
  }
  b.truth = Tensor<T>({indices.size(), 2}, std::move(truth));
  return b;
}

template <typename T>
struct LossTensors {
  Tensor<T> eye, region, gaze, total;

  LossReport report() const {
    return {static_cast<double>(eye.item()), static_cast<double>(region.item()),
            static_cast<double>(gaze.item()), static_cast<double>(total.item())};
  }
};

template <typename T>
LossTensors<T> compute_losses(const ModelConfig& cfg, const ForwardOutput<T>& out,
                              const Batch<T>& batch) {
  LossTensors<T> l;
  l.eye = eye_recon_loss(out.recon_left, out.recon_right, batch.eye_left, batch.eye_right);
  l.region = region_recon_loss(out.recon_top, out.recon_mid, out.recon_bot, batch.top,
                               batch.mid, batch.bot);
  l.gaze = gaze_loss(out.gaze, batch.truth);
  l.total = total_loss(l.eye, l.region, l.gaze, cfg.lambda_eye, cfg.lambda_region);
  return l;
}

// ---------------------------------------------------------------------------

struct SampleError {
  std::size_t index = 0;
  std::uint64_t seed = 0;
  GazeAngles truth, prediction;
  double error_deg = 0.0;
};

struct EvalResult {
  double mean_error_deg = 0.0;
  std::vector<SampleError> samples;
};

namespace detail {
template <typename T, typename Predict>
EvalResult evaluate_with(const std::vector<GazeSample<T>>& samples, Predict predict) {
  if (samples.empty()) throw UsageError("evaluation set is empty");
  EvalResult r;
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    SampleError e;
    e.index = i;
    e.seed = samples[i].recipe.seed;
    e.truth = samples[i].truth;
    e.prediction = predict(i);
    e.error_deg = angular_error(e.prediction, e.truth);
    total += e.error_deg;
    r.samples.push_back(e);
  }
  r.mean_error_deg = total / static_cast<double>(samples.size());
  return r;
}
}  // namespace detail

/// Mean angular error of the model's gaze predictions, in degrees.
template <typename T>
EvalResult evaluate(const GazeModel<T>& model, const std::vector<GazeSample<T>>& samples,
                    std::size_t batch_size = 50) {
  if (samples.empty()) throw UsageError("evaluation set is empty");
  NoGradScope<T> no_grad;
  std::vector<GazeAngles> predictions;
  predictions.reserve(samples.size());
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, samples.size() - start);
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), start);
    const Batch<T> b = make_batch<T>(samples, idx);
    const Tensor<T> g = model.predict_gaze(b.face, b.eye_left, b.eye_right);
    for (std::size_t i = 0; i < n; ++i) {
      predictions.push_back({static_cast<double>(g[2 * i]), static_cast<double>(g[2 * i + 1])});
    }
  }
  return detail::evaluate_with(samples, [&](std::size_t i) { return predictions[i]; });
}

/// Error of a predictor that always answers `constant`.
template <typename T>
EvalResult evaluate_constant(const std::vector<GazeSample<T>>& samples,
                             const GazeAngles& constant = {}) {
  return detail::evaluate_with(samples, [&](std::size_t) { return constant; });
}

inline void write_eval_csv(const std::string& path, const EvalResult& r) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << "index,seed,truth_pitch_deg,truth_yaw_deg,pred_pitch_deg,pred_yaw_deg,angular_error_deg\n";
  out << std::fixed << std::setprecision(4);
  for (const auto& s : r.samples) {
    out << s.index << ',' << s.seed << ',' << degrees(s.truth.pitch) << ','
        << degrees(s.truth.yaw) << ',' << degrees(s.prediction.pitch) << ','
        << degrees(s.prediction.yaw) << ',' << s.error_deg << '\n';
  }
}

// ---------------------------------------------------------------------------

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double gaze = 0.0;
  double eye = 0.0;
  double region = 0.0;
  double test_error_deg = 0.0;
};

inline constexpr const char* kMetricsHeader = "epoch,lr,Lg,L1,L2,test_angular_error_deg";

/// One CSV row; 17 significant digits so that equal rows mean equal runs.
inline std::string metrics_row(const EpochMetrics& m) {
  std::ostringstream os;
  os << std::setprecision(17) << m.epoch << ',' << m.lr << ',' << m.gaze << ',' << m.eye
     << ',' << m.region << ',' << m.test_error_deg;
  return os.str();
}

/// Position in a training run; together with parameters and moments this is
/// everything a resumed run needs.
struct TrainState {
  std::size_t epoch = 0;  // completed epochs
  std::uint64_t step = 0;
  double lr = 0.0;
  std::uint64_t seed = 0;
};

/// Sample order of an epoch; depends only on (seed, epoch), so a resumed run
/// visits the same batches as an uninterrupted one.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix64(mix64(seed) ^ (0x9e3779b97f4a7c15ULL * (epoch + 1))));
  rng.shuffle(order);
  return order;
}

template <typename T>
class Trainer {
 public:
  Trainer(const ModelConfig& model_config, const TrainConfig& train_config)
      : train_config_(train_config), model_(model_config, train_config.seed) {
    train_config.validate();
    optimizer_ = AdamW<T>(model_.parameters(),
                          {train_config.beta1, train_config.beta2, train_config.eps,
                           train_config.weight_decay});
    state_.seed = train_config.seed;
    state_.lr = current_lr();
  }

  Trainer(const Trainer&) = delete;
  Trainer& operator=(const Trainer&) = delete;

  GazeModel<T>& model() { return model_; }
  const GazeModel<T>& model() const { return model_; }
  AdamW<T>& optimizer() { return optimizer_; }
  const AdamW<T>& optimizer() const { return optimizer_; }
  const TrainConfig& config() const { return train_config_; }
  TrainState& state() { return state_; }
  const TrainState& state() const { return state_; }

  double current_lr() const {
    return multistep_lr(state_.epoch, train_config_.base_lr, train_config_.milestones,
                        train_config_.lr_gamma);
  }

  /// Called after every optimizer step with that step's forward output.
  std::function<void(const ForwardOutput<T>&)> on_step;

  /// Forward, backward and one AdamW update on a batch.
  LossReport step(const Batch<T>& batch, double lr) {
    Tape<T> tape;
    ForwardOutput<T> out;
    LossTensors<T> losses;
    {
      TapeScope<T> scope(tape);
      out = model_.forward(batch.face, batch.eye_left, batch.eye_right);
      losses = compute_losses(model_.config(), out, batch);
    }
    const LossReport r = losses.report();
    if (!std::isfinite(r.total)) {
      std::ostringstream os;
      os << "training diverged at epoch " << state_.epoch + 1 << ", step " << state_.step + 1
         << ": Lg=" << r.gaze << " L1=" << r.eye << " L2=" << r.region;
      throw NumericError(os.str());
    }
    tape.backward(losses.total);
    optimizer_.step(lr);
    ++state_.step;
    if (on_step) on_step(out);
    return r;
  }

  /// One pass over train followed by evaluation on test.
  EpochMetrics run_epoch(const std::vector<GazeSample<T>>& train,
                         const std::vector<GazeSample<T>>& test) {
    if (train.empty()) throw UsageError("training set is empty");
    const double lr = current_lr();
    state_.lr = lr;
    const auto order = epoch_order(train.size(), train_config_.seed, state_.epoch);
    EpochMetrics m;
    m.epoch = state_.epoch + 1;
    m.lr = lr;
    for (std::size_t start = 0; start < order.size(); start += train_config_.batch_size) {
      const std::size_t n = std::min(train_config_.batch_size, order.size() - start);
      const Batch<T> b = make_batch<T>(train, std::span(order).subspan(start, n));
      const LossReport r = step(b, lr);
      const double w = static_cast<double>(n);
      m.gaze += r.gaze * w;
      m.eye += r.eye * w;
      m.region += r.region * w;
    }
    const double total = static_cast<double>(train.size());
    m.gaze /= total;
    m.eye /= total;
    m.region /= total;
    m.test_error_deg = test.empty() ? 0.0 : evaluate(model_, test).mean_error_deg;
    ++state_.epoch;
    state_.lr = current_lr();
    return m;
  }

  /// Runs the remaining epochs up to config().epochs.
  std::vector<EpochMetrics> fit(const std::vector<GazeSample<T>>& train,
                                const std::vector<GazeSample<T>>& test,
                                const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    std::vector<EpochMetrics> history;
    while (state_.epoch < train_config_.epochs) {
      history.push_back(run_epoch(train, test));
      if (on_epoch) on_epoch(history.back());
    }
    return history;
  }

 private:
  TrainConfig train_config_;
  GazeModel<T> model_;
  AdamW<T> optimizer_;
  TrainState state_;
};

}  // namespace dualgaze
