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

// Command-line front end: data generation, training, evaluation, gradient
// checks, attention export and parameter sweeps.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "dualgaze/dualgaze.hpp"

namespace fs = std::filesystem;
using namespace dualgaze;

namespace {

struct GenDataArgs {
  std::uint64_t seed = 7;
  std::size_t count = 2500;
  double split = 0.8;
  std::size_t face_size = 64;
  std::size_t eye_height = 24, eye_width = 40;
  std::string out;
};

struct TrainArgs {
  std::string config, data, out, resume;
  std::optional<std::size_t> epochs, batch;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  std::optional<std::string> precision;
};

struct EvalArgs {
  std::string checkpoint, data, report, split = "test";
};

struct GradcheckArgs {
  std::string module;
  std::size_t seeds = 10;
  bool list = false;
};

struct DumpArgs {
  std::string checkpoint, out;
  std::uint64_t sample = 0;
};

struct SweepArgs {
  std::string param, config, data, out = "sweep.csv";
  std::vector<double> values;
  std::optional<std::size_t> epochs;
  std::uint64_t data_seed = 7;
  std::size_t count = 2500;
};

RunConfig run_config_from(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

void check_data_fits(const DatasetSpec& d, const ModelConfig& m) {
  if (d.face_height != m.face_height || d.face_width != m.face_width ||
      d.eye_height != m.eye_height || d.eye_width != m.eye_width) {
    throw ConfigError("dataset extents (face " + std::to_string(d.face_height) + "x" +
                      std::to_string(d.face_width) + ", eyes " + std::to_string(d.eye_height) +
                      "x" + std::to_string(d.eye_width) + ") do not match the model config");
  }
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Rows of an existing metrics file up to and including `epochs`.
std::vector<std::string> kept_metrics(const fs::path& path, std::size_t epochs) {
  std::vector<std::string> rows;
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return rows;
  while (std::getline(in, line) && rows.size() < epochs) {
    if (!line.empty()) rows.push_back(line);
  }
  return rows;
}

// ---------------------------------------------------------------------------

int gen_data(const GenDataArgs& a) {
  DatasetSpec spec;
  spec.seed = a.seed;
  spec.count = a.count;
  spec.split_ratio = a.split;
  spec.face_height = spec.face_width = a.face_size;
  spec.eye_height = a.eye_height;
  spec.eye_width = a.eye_width;
  const auto t0 = std::chrono::steady_clock::now();
  const auto d = dataset_generate<float>(spec);
  write_dataset(a.out, d);
  std::cout << "wrote " << d.train.size() << " train / " << d.test.size() << " test samples to "
            << a.out << " in " << std::fixed << std::setprecision(1) << seconds_since(t0) << " s\n";
  return 0;
}

template <typename T>
int train_as(const TrainArgs& a, const RunConfig& run) {
  const auto data = load_dataset<T>(a.data);
  check_data_fits(data.spec, run.model);
  fs::create_directories(a.out);
  const fs::path out(a.out);
  save_config((out / "config.cfg").string(), run);

  Trainer<T> trainer(run.model, run.train);
  std::vector<std::string> rows;
  if (!a.resume.empty()) {
    const CheckpointData ck = read_checkpoint(a.resume);
    if (parse_config(ck.config_text).train.seed != run.train.seed) {
      throw ConfigError("resume: checkpoint was trained with a different seed");
    }
    load_checkpoint(ck, trainer);
    rows = kept_metrics(out / "metrics.csv", trainer.state().epoch);
    std::cout << "resumed at epoch " << trainer.state().epoch << " from " << a.resume << '\n';
  }
  std::cout << "model: " << trainer.model().parameter_count() << " parameters, " << data.train.size()
            << " train / " << data.test.size() << " test samples, precision " << run.precision
            << '\n'
            << kMetricsHeader << '\n';
  for (const auto& r : rows) std::cout << r << '\n';

  auto write_metrics = [&] {
    const std::string tmp = (out / "metrics.csv.tmp").string();
    {
      std::ofstream m(tmp);
      m << kMetricsHeader << '\n';
      for (const auto& r : rows) m << r << '\n';
    }
    fs::rename(tmp, out / "metrics.csv");
  };
  write_metrics();
  const auto t0 = std::chrono::steady_clock::now();
  trainer.fit(data.train, data.test, [&](const EpochMetrics& m) {
    rows.push_back(metrics_row(m));
    write_metrics();
    save_checkpoint((out / "checkpoint.bin").string(), trainer, run);
    std::cout << rows.back() << "   (" << std::fixed << std::setprecision(1) << seconds_since(t0)
              << " s)" << std::defaultfloat << std::endl;
  });
  save_checkpoint((out / "checkpoint.bin").string(), trainer, run);
  std::cout << "checkpoint: " << (out / "checkpoint.bin").string() << '\n';
  return 0;
}

int train(const TrainArgs& a) {
  RunConfig run = run_config_from(a.config);
  if (a.epochs) run.train.epochs = *a.epochs;
  if (a.batch) run.train.batch_size = *a.batch;
  if (a.seed) run.train.seed = *a.seed;
  if (a.lr) run.train.base_lr = *a.lr;
  if (a.precision) run.precision = *a.precision;
  run.train.validate();
  return run.precision == "double" ? train_as<double>(a, run) : train_as<float>(a, run);
}

template <typename T>
int eval_as(const EvalArgs& a, const CheckpointData& ck, const RunConfig& run) {
  GazeModel<T> model(run.model, run.train.seed);
  load_parameters(ck, model);
  const auto data = load_dataset<T>(a.data);
  check_data_fits(data.spec, run.model);
  const auto& samples = a.split == "train" ? data.train : data.test;
  const EvalResult r = evaluate(model, samples);
  const EvalResult baseline = evaluate_constant(samples);
  std::cout << std::fixed << std::setprecision(4) << "samples: " << samples.size() << '\n'
            << "mean angular error: " << r.mean_error_deg << " deg\n"
            << "constant (0, 0) predictor: " << baseline.mean_error_deg << " deg\n";
  if (!a.report.empty()) {
    write_eval_csv(a.report, r);
    std::cout << "report: " << a.report << '\n';
  }
  return 0;
}

int eval(const EvalArgs& a) {
  const CheckpointData ck = read_checkpoint(a.checkpoint);
  const RunConfig run = parse_config(ck.config_text);
  return run.precision == "double" ? eval_as<double>(a, ck, run) : eval_as<float>(a, ck, run);
}

int gradcheck(const GradcheckArgs& a) {
  const auto cases = gradcheck_suite();
  if (a.list) {
    for (const auto& c : cases) std::cout << c.name << '\n';
    return 0;
  }
  bool any = false, all_pass = true;
  for (const auto& c : cases) {
    if (!a.module.empty() && c.name != a.module) continue;
    any = true;
    const auto t0 = std::chrono::steady_clock::now();
    double worst = 0.0;
    std::string where;
    std::size_t coords = 0;
    for (std::uint64_t seed = 0; seed < a.seeds; ++seed) {
      const auto r = c.run(seed);
      coords += r.coordinates;
      if (r.max_error >= worst) {
        worst = r.max_error;
        where = r.worst + " (seed " + std::to_string(seed) + ")";
      }
    }
    const bool pass = worst < c.tolerance;
    all_pass &= pass;
    std::printf("%-36s %s  max_rel_error=%.3e  tol=%.0e  coords=%zu  worst=%s  %.1fs\n",
                c.name.c_str(), pass ? "PASS" : "FAIL", worst, c.tolerance, coords, where.c_str(),
                seconds_since(t0));
  }
  if (!any) throw UsageError("no gradient check named '" + a.module + "' (see --list)");
  return all_pass ? 0 : 1;
}

template <typename T>
int dump_as(const DumpArgs& a, const CheckpointData& ck, const RunConfig& run) {
  GazeModel<T> model(run.model, run.train.seed);
  load_parameters(ck, model);
  const FaceLayout layout = run.model.layout();
  const SampleRecipe recipe = sample_recipe(a.sample);
  const auto sample = make_sample<T>(layout, run.model.eye_height, run.model.eye_width, recipe);
  const AttentionDump dump = dump_attention(model, sample, a.out);
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < dump.mask_upper.size(); ++i) {
    const double s = dump.mask_upper[i] + dump.mask_lower[i];
    lo = std::min(lo, s);
    hi = std::max(hi, s);
  }
  std::cout << "sample seed " << a.sample << ": pitch " << degrees(recipe.truth.pitch) << " deg, yaw "
            << degrees(recipe.truth.yaw) << " deg\n"
            << "upper + lower mask mean in [" << std::setprecision(17) << lo << ", " << hi << "]\n";
  for (const auto& f : dump.files) std::cout << f << '\n';
  return 0;
}

int dump(const DumpArgs& a) {
  const CheckpointData ck = read_checkpoint(a.checkpoint);
  const RunConfig run = parse_config(ck.config_text);
  return run.precision == "double" ? dump_as<double>(a, ck, run) : dump_as<float>(a, ck, run);
}

template <typename T>
int sweep_as(const SweepArgs& a, const RunConfig& run) {
  Dataset<T> data;
  if (!a.data.empty()) {
    data = load_dataset<T>(a.data);
  } else {
    DatasetSpec spec;
    spec.seed = a.data_seed;
    spec.count = a.count;
    spec.face_height = run.model.face_height;
    spec.face_width = run.model.face_width;
    spec.eye_height = run.model.eye_height;
    spec.eye_width = run.model.eye_width;
    data = dataset_generate<T>(spec);
  }
  check_data_fits(data.spec, run.model);
  std::cout << kSweepHeader << std::endl;
  const auto rows = run_sweep<T>(run.model, run.train, data, a.param, a.values,
                                 [](const SweepRow& r) { std::cout << sweep_row(r) << std::endl; });
  write_sweep_csv(a.out, rows);
  std::cout << "wrote " << a.out << '\n';
  bool ok = true;
  for (const auto& r : rows) ok &= r.beats_baselines();
  return ok ? 0 : 1;
}

int sweep(const SweepArgs& a) {
  RunConfig run = run_config_from(a.config);
  if (a.epochs) run.train.epochs = *a.epochs;
  for (double v : a.values) with_sweep_value(run.model, a.param, v);  // fail fast
  return run.precision == "double" ? sweep_as<double>(a, run) : sweep_as<float>(a, run);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dualgaze: two-branch gaze estimation on synthetic faces"};
  app.require_subcommand(1);

  GenDataArgs g;
  auto* gen = app.add_subcommand("gen-data", "Render a synthetic dataset to a directory");
  gen->add_option("--seed", g.seed, "Dataset seed")->capture_default_str();
  gen->add_option("--count", g.count, "Number of samples")->capture_default_str();
  gen->add_option("--split", g.split, "Fraction of samples in the train split")->capture_default_str();
  gen->add_option("--face-size", g.face_size, "Face image height and width")->capture_default_str();
  gen->add_option("--eye-height", g.eye_height, "Eye crop height")->capture_default_str();
  gen->add_option("--eye-width", g.eye_width, "Eye crop width")->capture_default_str();
  gen->add_option("--out", g.out, "Output directory")->required();

  TrainArgs t;
  auto* tr = app.add_subcommand("train", "Train a model; writes config.cfg, metrics.csv, checkpoint.bin");
  tr->add_option("--config", t.config, "Config file (defaults when omitted)");
  tr->add_option("--data", t.data, "Dataset directory from gen-data")->required();
  tr->add_option("--out", t.out, "Run directory")->required();
  tr->add_option("--epochs", t.epochs, "Override epochs");
  tr->add_option("--batch", t.batch, "Override batch size");
  tr->add_option("--seed", t.seed, "Override training seed");
  tr->add_option("--lr", t.lr, "Override base learning rate");
  tr->add_option("--precision", t.precision, "float or double")->check(CLI::IsMember({"float", "double"}));
  tr->add_option("--resume", t.resume, "Checkpoint to continue from");

  EvalArgs e;
  auto* ev = app.add_subcommand("eval", "Mean angular error of a checkpoint on a dataset split");
  ev->add_option("--checkpoint", e.checkpoint, "Checkpoint file")->required();
  ev->add_option("--data", e.data, "Dataset directory")->required();
  ev->add_option("--report", e.report, "Per-sample CSV report");
  ev->add_option("--split", e.split, "train or test")->check(CLI::IsMember({"train", "test"}))->capture_default_str();

  GradcheckArgs gc;
  auto* gr = app.add_subcommand("gradcheck", "Finite-difference gradient checks at 64-bit precision");
  gr->add_option("--module", gc.module, "Run one check only");
  gr->add_option("--seeds", gc.seeds, "Seeds per check")->capture_default_str();
  gr->add_flag("--list", gc.list, "List the available checks");

  DumpArgs d;
  auto* du = app.add_subcommand("dump-attention", "Write mask and CBAM spatial heatmaps for one sample");
  du->add_option("--checkpoint", d.checkpoint, "Checkpoint file")->required();
  du->add_option("--sample", d.sample, "Per-sample seed of the rendered face")->required();
  du->add_option("--out", d.out, "Output directory")->required();

  SweepArgs s;
  auto* sw = app.add_subcommand("sweep", "Train once per value of k_rounds or sigma");
  sw->add_option("--param", s.param, "Parameter")->required()->check(CLI::IsMember(sweep_parameters()));
  sw->add_option("--values", s.values, "Values, comma separated")->required()->delimiter(',');
  sw->add_option("--config", s.config, "Base config file");
  sw->add_option("--data", s.data, "Dataset directory (generated in memory when omitted)");
  sw->add_option("--data-seed", s.data_seed, "Seed of the in-memory dataset")->capture_default_str();
  sw->add_option("--count", s.count, "Size of the in-memory dataset")->capture_default_str();
  sw->add_option("--epochs", s.epochs, "Override epochs");
  sw->add_option("--out", s.out, "CSV output")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(g);
    if (*tr) return train(t);
    if (*ev) return eval(e);
    if (*gr) return gradcheck(gc);
    if (*du) return dump(d);
    if (*sw) return sweep(s);
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << '\n';
    return 2;
  } catch (const IntegrityError& ex) {
    std::cerr << "integrity error: " << ex.what() << '\n';
    return 3;
  } catch (const NumericError& ex) {
    std::cerr << "numeric error: " << ex.what() << '\n';
    return 4;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << '\n';
    return 1;
  }
  return 0;
}
