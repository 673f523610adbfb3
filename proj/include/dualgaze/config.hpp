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

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "dualgaze/errors.hpp"
#include "dualgaze/model.hpp"
#include "dualgaze/train.hpp"

namespace dualgaze {

/// Everything a training run is configured by.
///
/// The file form is flat `key = value` lines; `#` starts a comment, lists
/// are comma-separated, and `format_version = 1` is required.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  // Scalar type used for training: "float" or "double".
  std::string precision = "float";

  bool operator==(const RunConfig&) const = default;
};

inline constexpr int kConfigFormatVersion = 1;

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::string format_list(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename V>
V parse_number(const std::string& key, const std::string& text) {
  V value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("bad value for " + key + ": '" + text + "'");
  }
  return value;
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError("empty list for " + key);
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("bad boolean for " + key + ": '" + text + "'");
}

}  // namespace detail

/// Canonical text of the architecture section; the checkpoint digest is
/// taken over exactly these bytes.
inline std::string model_config_text(const ModelConfig& m) {
  using detail::format_double;
  using detail::format_list;
  std::ostringstream os;
  os << "face_height = " << m.face_height << '\n'
     << "face_width = " << m.face_width << '\n'
     << "eye_height = " << m.eye_height << '\n'
     << "eye_width = " << m.eye_width << '\n'
     << "face_channels = " << format_list(m.face_channels) << '\n'
     << "eye_channels = " << format_list(m.eye_channels) << '\n'
     << "pose_channels = " << format_list(m.pose_channels) << '\n'
     << "pose_dim = " << m.pose_dim << '\n'
     << "gaze_hidden = " << m.gaze_hidden << '\n'
     << "decoder_channels = " << format_list(m.decoder_channels) << '\n'
     << "groups = " << m.groups << '\n'
     << "rounds = " << m.rounds << '\n'
     << "sigma = " << format_double(m.sigma) << '\n'
     << "learnable_sigma = " << (m.learnable_sigma ? "true" : "false") << '\n'
     << "cbam_reduction = " << m.cbam_reduction << '\n'
     << "lambda_eye = " << format_double(m.lambda_eye) << '\n'
     << "lambda_region = " << format_double(m.lambda_region) << '\n';
  return os.str();
}

inline std::string to_config_text(const RunConfig& c) {
  using detail::format_double;
  const TrainConfig& t = c.train;
  std::ostringstream os;
  os << "format_version = " << kConfigFormatVersion << "\n\n"
     << "# model\n"
     << model_config_text(c.model) << '\n'
     << "# training\n"
     << "precision = " << c.precision << '\n'
     << "epochs = " << t.epochs << '\n'
     << "batch_size = " << t.batch_size << '\n'
     << "base_lr = " << format_double(t.base_lr) << '\n'
     << "lr_gamma = " << format_double(t.lr_gamma) << '\n'
     << "milestones = " << detail::format_list(t.milestones) << '\n'
     << "beta1 = " << format_double(t.beta1) << '\n'
     << "beta2 = " << format_double(t.beta2) << '\n'
     << "eps = " << format_double(t.eps) << '\n'
     << "weight_decay = " << format_double(t.weight_decay) << '\n'
     << "seed = " << t.seed << '\n';
  return os.str();
}

/// Parses config text. Keys left out keep their defaults; unknown keys,
/// duplicates and a missing or different format_version are errors.
inline RunConfig parse_config(const std::string& text) {
  using namespace detail;
  RunConfig c;
  ModelConfig& m = c.model;
  TrainConfig& t = c.train;
  using Setter = std::function<void(const std::string&, const std::string&)>;
  auto size = [](std::size_t& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_number<std::size_t>(k, v); };
  };
  auto real = [](double& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_number<double>(k, v); };
  };
  auto list = [](std::vector<std::size_t>& f) -> Setter {
    return [&f](const std::string& k, const std::string& v) { f = parse_list(k, v); };
  };
  int version = -1;
  const std::map<std::string, Setter> setters{
      {"format_version",
       [&](const std::string& k, const std::string& v) { version = parse_number<int>(k, v); }},
      {"face_height", size(m.face_height)},
      {"face_width", size(m.face_width)},
      {"eye_height", size(m.eye_height)},
      {"eye_width", size(m.eye_width)},
      {"face_channels", list(m.face_channels)},
      {"eye_channels", list(m.eye_channels)},
      {"pose_channels", list(m.pose_channels)},
      {"pose_dim", size(m.pose_dim)},
      {"gaze_hidden", size(m.gaze_hidden)},
      {"decoder_channels", list(m.decoder_channels)},
      {"groups", size(m.groups)},
      {"rounds", size(m.rounds)},
      {"sigma", real(m.sigma)},
      {"learnable_sigma",
       [&](const std::string& k, const std::string& v) { m.learnable_sigma = parse_bool(k, v); }},
      {"cbam_reduction", size(m.cbam_reduction)},
      {"lambda_eye", real(m.lambda_eye)},
      {"lambda_region", real(m.lambda_region)},
      {"precision",
       [&](const std::string& k, const std::string& v) {
         if (v != "float" && v != "double") throw ConfigError("bad value for " + k + ": " + v);
         c.precision = v;
       }},
      {"epochs", size(t.epochs)},
      {"batch_size", size(t.batch_size)},
      {"base_lr", real(t.base_lr)},
      {"lr_gamma", real(t.lr_gamma)},
      {"milestones",
       [&](const std::string& k, const std::string& v) {
         t.milestones = trim(v).empty() ? std::vector<std::size_t>{} : parse_list(k, v);
       }},
      {"beta1", real(t.beta1)},
      {"beta2", real(t.beta2)},
      {"eps", real(t.eps)},
      {"weight_decay", real(t.weight_decay)},
      {"seed",
       [&](const std::string& k, const std::string& v) { t.seed = parse_number<std::uint64_t>(k, v); }},
  };

  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string body = trim(line.substr(0, line.find('#')));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(body.substr(0, eq));
    const std::string value = trim(body.substr(eq + 1));
    const auto it = setters.find(key);
    if (it == setters.end()) {
      throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (seen[key]++) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    it->second(key, value);
  }
  if (version == -1) throw ConfigError("config lacks format_version");
  if (version != kConfigFormatVersion) {
    throw ConfigError("unsupported config format_version " + std::to_string(version));
  }
  m.validate();
  t.validate();
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

inline void save_config(const std::string& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config " + path);
  out << to_config_text(c);
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t config_digest(const ModelConfig& m) { return fnv1a(model_config_text(m)); }

}  // namespace dualgaze
