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

// Frozen reconstruction targets. Teachers run outside any tape.
//
// A teacher that downsamples by `d` pixels per token is fed the image
// bilinearly resized by d / patch_side, so its token grid matches the
// student's patch grid.

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "mimkit/image_io.hpp"
#include "mimkit/tensor.hpp"

namespace mimkit {

enum class TeacherKind { kFile, kProcedural };

struct TeacherSpec {
  TeacherKind kind = TeacherKind::kProcedural;
  std::size_t downsample_rate = 8;  // pixels per token side
  std::size_t dim = 16;             // D_t
  std::uint64_t seed = 0;           // procedural only
  std::size_t hidden = 16;          // procedural intermediate channels
  std::filesystem::path features_dir;  // file only
  bool l2_normalize = false;

  void validate() const;
  std::string source_id() const;
};

void to_json(nlohmann::json& j, const TeacherSpec& s);
void from_json(const nlohmann::json& j, TeacherSpec& s);

struct TeacherFeatures {
  Tensor<float> tokens;  // [K x D_t], row-major over the token grid
  std::size_t grid_side = 0;
  std::string source_id;
};

// Bilinear resize of [C x H x W] to [C x out x out], half-pixel centers:
// src = (dst + 0.5) * in / out - 0.5, clamped to [0, in - 1].
Tensor<float> bilinear_resize(const Tensor<float>& image, std::size_t out_side);

// Resizes by teacher_downsample / student_patch_side. Throws ConfigError when
// the factor is not a positive integer.
Tensor<float> align_input(const Tensor<float>& image, std::size_t student_patch_side, std::size_t teacher_downsample);

// Stacked stride-2 3x3 convolutions with tanh, fixed random weights. Each
// stage halves the spatial extent; log2(downsample_rate) stages.
class ProceduralTeacher {
 public:
  ProceduralTeacher(const TeacherSpec& spec, std::size_t in_channels);

  // image: [C x S x S], S divisible by downsample_rate.
  Tensor<float> run(const Tensor<float>& image) const;
  std::size_t stages() const { return stages_.size(); }

 private:
  struct Stage {
    std::size_t in_ch, out_ch;
    std::vector<double> weights;  // [out][in][3][3]
    std::vector<double> bias;
  };
  std::vector<Stage> stages_;
};

class Teacher {
 public:
  Teacher(const TeacherSpec& spec, std::size_t in_channels, std::size_t student_patch_side);

  // image.pixels at student resolution. File teachers look up <dir>/<id>.tvec.
  TeacherFeatures extract(const Image& image) const;

  const TeacherSpec& spec() const { return spec_; }

 private:
  TeacherSpec spec_;
  std::size_t patch_side_;
  std::size_t in_channels_;
  std::unique_ptr<ProceduralTeacher> procedural_;
};

// Writes <dir>/<id>.tvec for every image and <dir>/manifest.json, a JSON array
// of {"id", "grid_side", "dim"} in image order.
void dump_features(const Teacher& teacher, const std::vector<Image>& images, const std::filesystem::path& dir);

// Reads a dump written by dump_features, in manifest order.
std::vector<TeacherFeatures> load_feature_dir(const std::filesystem::path& dir);

}  // namespace mimkit
