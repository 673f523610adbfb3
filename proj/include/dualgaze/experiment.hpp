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
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dualgaze/errors.hpp"
#include "dualgaze/model.hpp"
#include "dualgaze/synth.hpp"
#include "dualgaze/train.hpp"

namespace dualgaze {

/// Parameters the sweep command can vary.
inline const std::vector<std::string>& sweep_parameters() {
  static const std::vector<std::string> names{"k_rounds", "sigma"};
  return names;
}

/// cfg with `param` set to `value`; rejects unknown names and non-integral
/// round counts.
inline ModelConfig with_sweep_value(ModelConfig cfg, const std::string& param, double value) {
  if (param == "k_rounds") {
    if (!(value >= 1.0) || value != std::floor(value)) {
      throw ConfigError("k_rounds must be a positive integer, got " + std::to_string(value));
    }
    cfg.rounds = static_cast<std::size_t>(value);
  } else if (param == "sigma") {
    cfg.sigma = value;
  } else {
    throw ConfigError("unknown sweep parameter '" + param + "' (expected k_rounds or sigma)");
  }
  cfg.validate();
  return cfg;
}

struct SweepRow {
  std::string param;
  double value = 0.0;
  double final_error_deg = 0.0;
  double untrained_error_deg = 0.0;
  double constant_error_deg = 0.0;

  bool beats_baselines() const {
    return final_error_deg < untrained_error_deg && final_error_deg < constant_error_deg;
  }
};

inline constexpr const char* kSweepHeader =
    "param,value,final_test_error_deg,untrained_error_deg,constant_error_deg,beats_baselines";

inline std::string sweep_row(const SweepRow& r) {
  std::ostringstream os;
  os << std::setprecision(17) << r.param << ',' << r.value << ',' << r.final_error_deg << ','
     << r.untrained_error_deg << ',' << r.constant_error_deg << ','
     << (r.beats_baselines() ? "true" : "false");
  return os.str();
}

/// Trains one model per value on the same data and reports its final test
/// error next to the untrained and constant-(0, 0) baselines.
template <typename T>
std::vector<SweepRow> run_sweep(const ModelConfig& base, const TrainConfig& train,
                                const Dataset<T>& data, const std::string& param,
                                const std::vector<double>& values,
                                const std::function<void(const SweepRow&)>& on_row = {}) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  if (data.train.empty() || data.test.empty()) {
    throw UsageError("sweep needs non-empty train and test splits");
  }
  const double constant = evaluate_constant(data.test).mean_error_deg;
  std::vector<SweepRow> rows;
  for (double v : values) {
    Trainer<T> trainer(with_sweep_value(base, param, v), train);
    SweepRow row;
    row.param = param;
    row.value = v;
    row.constant_error_deg = constant;
    row.untrained_error_deg = evaluate(trainer.model(), data.test).mean_error_deg;
    const auto history = trainer.fit(data.train, data.test);
    row.final_error_deg = history.empty() ? row.untrained_error_deg
                                          : history.back().test_error_deg;
    rows.push_back(row);
    if (on_row) on_row(row);
  }
  return rows;
}

inline void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::ofstream out(path);
  if (!out) throw UsageError("cannot write " + path);
  out << kSweepHeader << '\n';
  for (const auto& r : rows) out << sweep_row(r) << '\n';
}

}  // namespace dualgaze
