// Copyright 2026 The mimkit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// End-to-end gradient check of the pretraining loss in double precision.

#include <cstddef>
#include <functional>
#include <string>

#include "json.hpp"

#include "mimkit/losses.hpp"
#include "mimkit/model.hpp"
#include "mimkit/teacher.hpp"
#include "mimkit/tensor.hpp"

namespace mimkit {

struct GradCheckConfig {
  ModelConfig model = tiny_model();
  LossConfig loss;
  TeacherSpec teacher = tiny_teacher();
  std::size_t mask_block_side = 8;
  double mask_ratio = 0.5;
  std::uint64_t seed = 0;
  double h = 1e-5;
  double rel_floor = 1e-7;
  // Called on the analytic tape before the forward pass; tests use it to
  // install a corrupting backward probe.
  std::function<void(Tape<double>&)> instrument;

  static ModelConfig tiny_model();
  static TeacherSpec tiny_teacher();
  void validate() const;
};

struct GradCheckReport {
  double max_rel_err = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;
  std::size_t scalars_checked = 0;
  double loss = 0;
  double seconds = 0;

  nlohmann::json to_json() const;
};

GradCheckReport grad_check(const GradCheckConfig& cfg);

}  // namespace mimkit
