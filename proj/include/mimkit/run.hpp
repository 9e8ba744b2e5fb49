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

// One JSON document configuring every command, plus the multi-run harnesses.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mimkit/image_io.hpp"
#include "mimkit/trainer.hpp"

namespace mimkit {

struct DataConfig {
  std::string images_dir;           // empty: use synthetic images
  std::size_t synthetic_count = 8;
  std::uint64_t synthetic_seed = 0;
  float image_mean = 0.5f;
  float image_std = 0.5f;

  void validate() const;
};

struct RunConfig {
  TrainConfig train;
  DataConfig data;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// Parses and fully validates; every failure is a ConfigError naming the field.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Images named by data.images_dir, or normalized synthetic images at the
// model resolution.
std::vector<Image> load_run_images(const RunConfig& cfg);

struct AblationRow {
  double lambda = 0;
  LossValues first;
  LossValues last;
};

// Trains once per lambda with the shared seed; run i writes under
// out_dir/lambda_<i>.
std::vector<AblationRow> ablate_lambda(const TrainConfig& cfg, const std::vector<Image>& images,
                                       const std::vector<double>& lambdas, const std::filesystem::path& out_dir,
                                       const TrainOptions& options = {});
void validate_lambdas(const std::vector<double>& lambdas);
std::string ablation_csv(const std::vector<AblationRow>& rows);

// Last encoder layer of a trained student with every patch visible, [N x E].
Tensor<double> student_tokens(const StudentModel<float>& model, const Image& image);

}  // namespace mimkit
