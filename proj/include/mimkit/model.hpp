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

// Student network: patch embedding, an encoder that only sees visible
// patches (plus an optional CLS token), multi-block aggregation of encoder
// layers, a light decoder that fills masked slots with a learnable mask
// token, and a two-layer ReLU projector for the global objective.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "mimkit/masking.hpp"
#include "mimkit/tensor.hpp"

namespace mimkit {

enum class Aggregate { kMean, kSum };

struct ModelConfig {
  std::size_t image_side = 32;
  std::size_t channels = 3;
  std::size_t patch_side = 8;
  std::size_t embed_dim = 32;
  std::size_t enc_depth = 2;
  std::size_t enc_heads = 2;
  std::size_t mlp_ratio = 4;
  std::size_t dec_depth = 1;
  std::size_t dec_width = 32;
  std::size_t dec_heads = 2;
  std::size_t target_dim = 16;
  std::size_t proj_hidden = 0;  // 0: same as embed_dim
  bool use_cls = true;
  bool multi_block = true;
  Aggregate aggregate = Aggregate::kMean;

  void validate() const;

  std::size_t grid_side() const { return image_side / patch_side; }
  std::size_t num_patches() const { return grid_side() * grid_side(); }
  std::size_t patch_dim() const { return channels * patch_side * patch_side; }
  std::size_t projector_hidden() const { return proj_hidden ? proj_hidden : embed_dim; }

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
// Missing fields keep their defaults; unknown fields are a ConfigError.
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
using ParamMap = std::map<std::string, Tensor<T>>;

// Fixed 2-D sine-cosine table [grid_side^2 x dim]. The first half of the
// channels encodes the column, the second half the row.
template <typename T>
Tensor<T> sincos_pos_embed(std::size_t grid_side, std::size_t dim);

template <typename T>
struct StudentOutput {
  std::vector<Tensor<T>> layers;      // per encoder block, visible tokens only [V x E]
  std::vector<Tensor<T>> cls_layers;  // per encoder block, [1 x E] (empty without CLS)
  Tensor<T> h;                        // aggregated visible tokens [V x E]
  Tensor<T> z;                        // predictions for every patch slot [N x D_t]
  Tensor<T> projected;                // p(h) per visible token [V x D_t]; empty if skipped
};

template <typename T>
class StudentModel {
 public:
  // Xavier-uniform weights, zero biases, unit norm gains, N(0, 0.02) tokens.
  StudentModel(const ModelConfig& config, std::uint64_t seed);
  StudentModel(const ModelConfig& config, ParamMap<T> params);

  const ModelConfig& config() const { return config_; }
  const ParamMap<T>& params() const { return params_; }
  ParamMap<T>& params() { return params_; }

  // Non-trainable positional tables; mutable so tests can probe equivariance.
  Tensor<T>& encoder_pos() { return enc_pos_; }
  Tensor<T>& decoder_pos() { return dec_pos_; }
  const Tensor<T>& encoder_pos() const { return enc_pos_; }
  const Tensor<T>& decoder_pos() const { return dec_pos_; }

  // Parameter views for one forward pass. With a tape every parameter is
  // registered on it exactly once; without one the values are used as-is.
  ParamMap<T> bind(Tape<T>* tape) const;

  std::size_t parameter_count() const;

 private:
  ModelConfig config_;
  ParamMap<T> params_;
  Tensor<T> enc_pos_;
  Tensor<T> dec_pos_;
};

// [C x H x W] -> [N x C*p*p], patches in row-major grid order, each patch
// flattened channel-major then row-major.
template <typename T>
Tensor<T> patchify(const Tensor<T>& image, std::size_t patch_side);

// Linear projection of patches without positional embeddings.
template <typename T>
Tensor<T> embed_patches(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& image);

// embed_patches plus the encoder positional table. [N x E]
template <typename T>
Tensor<T> patch_embed(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& image);

// Runs only visible tokens (and CLS) through the encoder; fills layers and
// cls_layers. Throws DegenerateMaskError without visible patches.
template <typename T>
StudentOutput<T> encode_visible(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& tokens,
                                const PatchMask& mask);

// Mean (or sum) over encoder layers when multi_block, else the last layer.
template <typename T>
Tensor<T> aggregate_multi_block(const std::vector<Tensor<T>>& layers, const ModelConfig& config);

// Predictions for all N slots in patch order. [N x D_t]
template <typename T>
Tensor<T> decode(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& h_visible,
                 const PatchMask& mask);

// Per-token projector p(.) applied to normalized tokens. [V x D_t]
template <typename T>
Tensor<T> project_global(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& tokens);

// Full student pass. The projector reads the last encoder layer and runs
// only when with_projector is set.
template <typename T>
StudentOutput<T> forward(const StudentModel<T>& model, const ParamMap<T>& p, const Tensor<T>& image,
                         const PatchMask& mask, bool with_projector = true);

// Checkpoint: u64 LE JSON length | ModelConfig JSON | u32 LE count |
// count x (u32 LE name length | name | tensor file blob), names sorted.
void save_checkpoint(const std::filesystem::path& path, const StudentModel<float>& model);
StudentModel<float> load_checkpoint(const std::filesystem::path& path);

}  // namespace mimkit
