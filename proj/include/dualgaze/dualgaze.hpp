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

#include "dualgaze/attention.hpp"
#include "dualgaze/checkpoint.hpp"
#include "dualgaze/config.hpp"
#include "dualgaze/errors.hpp"
#include "dualgaze/experiment.hpp"
#include "dualgaze/export.hpp"
#include "dualgaze/geometry.hpp"
#include "dualgaze/gradcheck.hpp"
#include "dualgaze/gradcheck_suite.hpp"
#include "dualgaze/image_io.hpp"
#include "dualgaze/losses.hpp"
#include "dualgaze/model.hpp"
#include "dualgaze/nn.hpp"
#include "dualgaze/ops.hpp"
#include "dualgaze/random.hpp"
#include "dualgaze/synth.hpp"
#include "dualgaze/tape.hpp"
#include "dualgaze/tensor.hpp"
#include "dualgaze/train.hpp"
