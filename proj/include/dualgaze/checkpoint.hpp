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

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dualgaze/config.hpp"
#include "dualgaze/errors.hpp"
#include "dualgaze/model.hpp"
#include "dualgaze/train.hpp"

namespace dualgaze {

// Binary layout, all integers and floats little-endian:
//
//   u32 format_version
//   u64 config digest (FNV-1a of the canonical model config text)
//   u64 parameter count, then per parameter:
//       u32 name length, name bytes, u32 rank, u64 extents[rank],
//       f64 values[product(extents)]
//   u64 epoch, u64 step, f64 lr, u64 seed, u64 optimizer steps
//   u64 moment count, then moment records in the parameter record format
//       (names "adam_m/<param>" and "adam_v/<param>")
//   u32 config text length, config text bytes
//   u64 FNV-1a of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct CheckpointData {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t digest = 0;
  std::vector<TensorRecord> parameters;
  TrainState state;
  std::uint64_t optimizer_steps = 0;
  std::vector<TensorRecord> moments;
  std::string config_text;
};

namespace detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    static_assert(std::is_integral_v<U>);
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes_.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
    }
  }
  void put_f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }
  void put_bytes(const std::string& s) { bytes_ += s; }
  void put_record(const TensorRecord& r) {
    put(static_cast<std::uint32_t>(r.name.size()));
    put_bytes(r.name);
    put(static_cast<std::uint32_t>(r.shape.size()));
    for (std::size_t e : r.shape) put(static_cast<std::uint64_t>(e));
    for (double v : r.values) put_f64(v);
  }
  std::string& bytes() { return bytes_; }

 private:
  std::string bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  double get_f64() { return std::bit_cast<double>(get<std::uint64_t>()); }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  TensorRecord get_record() {
    TensorRecord r;
    r.name = get_bytes(get<std::uint32_t>());
    const auto rank = get<std::uint32_t>();
    if (rank > 8) throw IntegrityError("checkpoint record '" + r.name + "' has rank " + std::to_string(rank));
    std::size_t n = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      r.shape.push_back(static_cast<std::size_t>(get<std::uint64_t>()));
      n *= r.shape.back();
    }
    need(n * 8);
    r.values.resize(n);
    for (double& v : r.values) v = get_f64();
    return r;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > bytes_.size() - pos_) throw IntegrityError("checkpoint is truncated");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

template <typename T>
TensorRecord to_record(const std::string& name, const Shape& shape, std::span<const T> values) {
  return {name, shape, std::vector<double>(values.begin(), values.end())};
}

}  // namespace detail

inline std::string encode_checkpoint(const CheckpointData& d) {
  detail::ByteWriter w;
  w.put(d.version);
  w.put(d.digest);
  w.put(static_cast<std::uint64_t>(d.parameters.size()));
  for (const auto& r : d.parameters) w.put_record(r);
  w.put(static_cast<std::uint64_t>(d.state.epoch));
  w.put(d.state.step);
  w.put_f64(d.state.lr);
  w.put(d.state.seed);
  w.put(d.optimizer_steps);
  w.put(static_cast<std::uint64_t>(d.moments.size()));
  for (const auto& r : d.moments) w.put_record(r);
  w.put(static_cast<std::uint32_t>(d.config_text.size()));
  w.put_bytes(d.config_text);
  w.put(fnv1a(w.bytes()));
  return std::move(w.bytes());
}

inline CheckpointData decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 8 + 4) throw IntegrityError("checkpoint is truncated");
  const std::string_view body = bytes.substr(0, bytes.size() - 8);
  detail::ByteReader tail(bytes.substr(bytes.size() - 8));
  const bool checksum_ok = tail.get<std::uint64_t>() == fnv1a(body);
  detail::ByteReader r(body);
  CheckpointData d;
  d.version = r.get<std::uint32_t>();
  if (d.version != kCheckpointVersion) {
    throw IntegrityError("unsupported checkpoint version " + std::to_string(d.version));
  }
  if (!checksum_ok) throw IntegrityError("checkpoint checksum mismatch (truncated or corrupted)");
  d.digest = r.get<std::uint64_t>();
  const auto n_params = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_params; ++i) d.parameters.push_back(r.get_record());
  d.state.epoch = static_cast<std::size_t>(r.get<std::uint64_t>());
  d.state.step = r.get<std::uint64_t>();
  d.state.lr = r.get_f64();
  d.state.seed = r.get<std::uint64_t>();
  d.optimizer_steps = r.get<std::uint64_t>();
  const auto n_moments = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_moments; ++i) d.moments.push_back(r.get_record());
  d.config_text = r.get_bytes(r.get<std::uint32_t>());
  if (r.remaining() != 0) throw IntegrityError("trailing bytes in checkpoint");
  return d;
}

inline CheckpointData read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IntegrityError("cannot read checkpoint " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

/// Writes through a temporary file and a rename, so a crash never leaves a
/// half-written checkpoint at path.
inline void write_checkpoint(const std::string& path, const CheckpointData& d) {
  const std::string bytes = encode_checkpoint(d);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write checkpoint " + tmp);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw UsageError("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
CheckpointData snapshot(const Trainer<T>& trainer, const RunConfig& config) {
  CheckpointData d;
  d.digest = config_digest(trainer.model().config());
  const auto params = trainer.model().parameters();
  for (const auto& p : params) {
    d.parameters.push_back(detail::to_record<T>(p.name, p.tensor.shape(), p.tensor.data()));
  }
  d.state = trainer.state();
  d.optimizer_steps = trainer.optimizer().steps();
  const auto& m = trainer.optimizer().first_moments();
  const auto& v = trainer.optimizer().second_moments();
  for (std::size_t i = 0; i < params.size(); ++i) {
    d.moments.push_back(detail::to_record<T>("adam_m/" + params[i].name, params[i].tensor.shape(),
                                             std::span<const T>(m[i])));
    d.moments.push_back(detail::to_record<T>("adam_v/" + params[i].name, params[i].tensor.shape(),
                                             std::span<const T>(v[i])));
  }
  d.config_text = to_config_text(config);
  return d;
}

template <typename T>
void save_checkpoint(const std::string& path, const Trainer<T>& trainer, const RunConfig& config) {
  write_checkpoint(path, snapshot(trainer, config));
}

namespace detail {

// Checks every record against the expected (name, shape) sequence and
// converts the payloads; nothing is written to the model here.
template <typename T>
std::vector<std::vector<T>> stage_records(const std::vector<TensorRecord>& records,
                                          const std::vector<std::pair<std::string, Shape>>& want) {
  if (records.size() != want.size()) {
    throw IntegrityError("checkpoint holds " + std::to_string(records.size()) +
                         " tensors, model expects " + std::to_string(want.size()));
  }
  std::vector<std::vector<T>> staged;
  staged.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].name != want[i].first || records[i].shape != want[i].second) {
      throw IntegrityError("checkpoint tensor '" + records[i].name + "' " +
                           to_string(records[i].shape) + " does not match '" + want[i].first +
                           "' " + to_string(want[i].second));
    }
    staged.emplace_back(records[i].values.begin(), records[i].values.end());
  }
  return staged;
}

inline void check_digest(const CheckpointData& d, const ModelConfig& m) {
  if (d.digest != config_digest(m)) {
    throw ConfigError("checkpoint was written for a different model configuration; refusing to load");
  }
}

}  // namespace detail

/// Restores model parameters only. All-or-nothing.
template <typename T>
void load_parameters(const CheckpointData& d, GazeModel<T>& model) {
  detail::check_digest(d, model.config());
  auto params = model.parameters();
  std::vector<std::pair<std::string, Shape>> want;
  for (const auto& p : params) want.emplace_back(p.name, p.tensor.shape());
  auto staged = detail::stage_records<T>(d.parameters, want);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(staged[i].begin(), staged[i].end(), params[i].tensor.mutable_data().begin());
  }
}

/// Restores parameters, optimizer moments and run position. All-or-nothing:
/// on any error the trainer is untouched.
template <typename T>
void load_checkpoint(const CheckpointData& d, Trainer<T>& trainer) {
  detail::check_digest(d, trainer.model().config());
  auto params = trainer.model().parameters();
  std::vector<std::pair<std::string, Shape>> want, want_moments;
  for (const auto& p : params) {
    want.emplace_back(p.name, p.tensor.shape());
    want_moments.emplace_back("adam_m/" + p.name, p.tensor.shape());
    want_moments.emplace_back("adam_v/" + p.name, p.tensor.shape());
  }
  auto staged = detail::stage_records<T>(d.parameters, want);
  auto staged_moments = detail::stage_records<T>(d.moments, want_moments);
  for (std::size_t i = 0; i < params.size(); ++i) {
    std::copy(staged[i].begin(), staged[i].end(), params[i].tensor.mutable_data().begin());
    params[i].tensor.zero_grad();
    trainer.optimizer().first_moments()[i] = std::move(staged_moments[2 * i]);
    trainer.optimizer().second_moments()[i] = std::move(staged_moments[2 * i + 1]);
  }
  trainer.optimizer().set_steps(d.optimizer_steps);
  trainer.state() = d.state;
}

template <typename T>
void load_checkpoint(const std::string& path, Trainer<T>& trainer) {
  load_checkpoint(read_checkpoint(path), trainer);
}

}  // namespace dualgaze
