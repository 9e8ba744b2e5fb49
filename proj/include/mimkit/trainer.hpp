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

// Pretraining: AdamW, linear warmup + cosine decay under the linear scaling
// rule, per-step block masks, a content-addressed cache of frozen teacher
// features, metrics CSV and checkpoints.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "mimkit/image_io.hpp"
#include "mimkit/losses.hpp"
#include "mimkit/masking.hpp"
#include "mimkit/model.hpp"
#include "mimkit/teacher.hpp"

namespace mimkit {

struct TrainConfig {
  double base_lr = 1.5e-4;
  std::size_t batch_size = 8;
  std::size_t warmup_epochs = 40;
  std::size_t total_epochs = 400;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // steps; 0 keeps only the final checkpoint

  LossConfig loss;
  ModelConfig model;
  TeacherSpec teacher;
  // image_side and patch_side are taken from the model config.
  std::size_t mask_block_side = 16;
  double mask_ratio = 0.6;
  std::uint64_t mask_seed = 0;

  MaskSpec mask_spec(std::uint64_t seed_override) const;
  // Checks every section and the cross-section geometry.
  void validate() const;
};

// JSON sections: "train", "loss", "model", "teacher", "mask".
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

double scaled_lr(double base_lr, std::size_t batch_size);

// t in fractional epochs. Linear ramp from 0 to peak over the warmup, then
// half-cosine down to 0 at total_epochs.
double lr_at(double t, double peak_lr, double warmup_epochs, double total_epochs);
double lr_at(double t, const TrainConfig& cfg);

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  // Parameters for which this returns false are not decayed. Null: all.
  std::function<bool(const std::string&)> decay_filter;
};

template <typename T>
struct OptimizerState {
  std::map<std::string, Tensor<T>> first_moment;
  std::map<std::string, Tensor<T>> second_moment;
  std::uint64_t step = 0;
};

// Decoupled weight decay:
//   m <- b1 m + (1 - b1) g,  v <- b2 v + (1 - b2) g^2
//   theta <- theta - lr (m_hat / (sqrt(v_hat) + eps) + wd theta)
template <typename T>
void adamw_step(ParamMap<T>& params, const GradMap<T>& grads, OptimizerState<T>& state, double lr,
                const AdamWConfig& cfg);

// Weight matrices decay; biases, norm parameters and tokens do not.
bool decays_by_default(const std::string& name);

// Frozen teacher outputs keyed by a hash of the image bytes. Entries are
// written once and never replaced.
class TeacherCache {
 public:
  explicit TeacherCache(const Teacher& teacher) : teacher_(teacher) {}

  const TeacherFeatures& get(const Image& image);
  // Extracts every image up front on `threads` workers.
  void prefetch(const std::vector<Image>& images, std::size_t threads);
  std::size_t size() const { return entries_.size(); }

  static std::uint64_t content_key(const Image& image);

 private:
  const Teacher& teacher_;
  std::map<std::uint64_t, TeacherFeatures> entries_;
  std::mutex mu_;
};

struct LossValues {
  double patch = 0;
  double global = 0;
  double total = 0;
};

struct StepMetrics {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0;
  LossValues loss;
};

// Forward one image without a tape and evaluate every loss term.
template <typename T>
LossValues evaluate_loss(const StudentModel<T>& model, const Tensor<T>& image, const Tensor<T>& targets,
                         const PatchMask& mask, const LossConfig& loss);

struct TrainOptions {
  bool write_checkpoints = true;
  std::size_t threads = 1;
  std::function<void(const StepMetrics&)> on_step;
};

struct TrainResult {
  std::vector<StepMetrics> metrics;
  StudentModel<float> model;
  std::size_t steps_per_epoch = 0;
};

// Writes <out_dir>/metrics.csv, <out_dir>/config.json and checkpoints
// <out_dir>/ckpt_<step>.bin. Deterministic for a fixed config.
TrainResult train(const TrainConfig& cfg, const std::vector<Image>& images, const std::filesystem::path& out_dir,
                  const TrainOptions& options = {});

// Same loop with the global objective and multi-block aggregation removed at
// compile time; L_global is logged as 0. Requires lambda == 0 and
// multi_block == false so both builds optimize the same objective.
TrainResult train_baseline(const TrainConfig& cfg, const std::vector<Image>& images,
                           const std::filesystem::path& out_dir, const TrainOptions& options = {});

std::string metrics_csv(const std::vector<StepMetrics>& metrics);

}  // namespace mimkit
