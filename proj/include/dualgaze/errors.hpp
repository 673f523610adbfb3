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

#include <stdexcept>
#include <string>

namespace dualgaze {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shapes that do not agree (rank, extents, broadcast rules).
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Hyperparameters or layouts that cannot be realized.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse: non-scalar loss, a consumed tape, wrong call order.
class UsageError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

/// Corrupt, truncated or mismatched files.
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dualgaze
