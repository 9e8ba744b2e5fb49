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

#include "mimkit/teacher.hpp"

#include <bit>
#include <cmath>
#include <fstream>

#include "mimkit/json_fields.hpp"
#include "mimkit/rng.hpp"
#include "mimkit/tensor_io.hpp"

namespace mimkit {

void TeacherSpec::validate() const {
  if (downsample_rate == 0) throw ConfigError("teacher.downsample_rate must be positive");
  if (dim == 0) throw ConfigError("teacher.dim must be positive");
  if (kind == TeacherKind::kProcedural) {
    if (!std::has_single_bit(downsample_rate) || downsample_rate < 2) {
      throw ConfigError("teacher.downsample_rate must be a power of two >= 2 for the procedural teacher");
    }
    if (hidden == 0) throw ConfigError("teacher.hidden must be positive");
  } else if (features_dir.empty()) {
    throw ConfigError("teacher.features_dir is required for a file teacher");
  }
}

std::string TeacherSpec::source_id() const {
  if (kind == TeacherKind::kFile) return "file:" + features_dir.string();
  return "procedural:d" + std::to_string(downsample_rate) + ":c" + std::to_string(dim) + ":h" + std::to_string(hidden) +
         ":s" + std::to_string(seed) + (l2_normalize ? ":l2" : "");
}

void to_json(nlohmann::json& j, const TeacherSpec& s) {
  j = nlohmann::json{{"kind", s.kind == TeacherKind::kFile ? "file" : "procedural"},
                     {"downsample_rate", s.downsample_rate},
                     {"dim", s.dim},
                     {"seed", s.seed},
                     {"hidden", s.hidden},
                     {"features_dir", s.features_dir.string()},
                     {"l2_normalize", s.l2_normalize}};
}

void from_json(const nlohmann::json& j, TeacherSpec& s) {
  using namespace json_fields;
  const std::string sec = "teacher";
  check_keys(j, sec, {"kind", "downsample_rate", "dim", "seed", "hidden", "features_dir", "l2_normalize"});
  const auto kind = get<std::string>(j, sec, "kind", s.kind == TeacherKind::kFile ? "file" : "procedural");
  if (kind == "file") {
    s.kind = TeacherKind::kFile;
  } else if (kind == "procedural") {
    s.kind = TeacherKind::kProcedural;
  } else {
    throw ConfigError("teacher.kind: expected \"file\" or \"procedural\"");
  }
  s.downsample_rate = get(j, sec, "downsample_rate", s.downsample_rate);
  s.dim = get(j, sec, "dim", s.dim);
  s.seed = get(j, sec, "seed", s.seed);
  s.hidden = get(j, sec, "hidden", s.hidden);
  s.features_dir = get<std::string>(j, sec, "features_dir", s.features_dir.string());
  s.l2_normalize = get(j, sec, "l2_normalize", s.l2_normalize);
}

// ---- alignment ----------------------------------------------------------------

Tensor<float> bilinear_resize(const Tensor<float>& image, std::size_t out_side) {
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) {
    throw DimensionError("bilinear_resize needs a square [C x H x W] image, got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), in = image.dim(1);
  if (out_side == in) return image.detach();
  Tensor<float> out({c, out_side, out_side});
  const double ratio = static_cast<double>(in) / static_cast<double>(out_side);
  auto source = [&](std::size_t dst, std::size_t& lo, std::size_t& hi, double& frac) {
    double s = (static_cast<double>(dst) + 0.5) * ratio - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    lo = static_cast<std::size_t>(std::floor(s));
    hi = std::min(lo + 1, in - 1);
    frac = s - static_cast<double>(lo);
  };
  for (std::size_t y = 0; y < out_side; ++y) {
    std::size_t y0, y1;
    double fy;
    source(y, y0, y1, fy);
    for (std::size_t x = 0; x < out_side; ++x) {
      std::size_t x0, x1;
      double fx;
      source(x, x0, x1, fx);
      for (std::size_t ch = 0; ch < c; ++ch) {
        auto px = [&](std::size_t yy, std::size_t xx) { return static_cast<double>(image[(ch * in + yy) * in + xx]); };
        const double top = px(y0, x0) * (1 - fx) + px(y0, x1) * fx;
        const double bottom = px(y1, x0) * (1 - fx) + px(y1, x1) * fx;
        out[(ch * out_side + y) * out_side + x] = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

Tensor<float> align_input(const Tensor<float>& image, std::size_t student_patch_side, std::size_t teacher_downsample) {
  if (student_patch_side == 0 || teacher_downsample == 0 || teacher_downsample % student_patch_side != 0) {
    throw ConfigError("teacher downsample rate " + std::to_string(teacher_downsample) +
                      " is not an integer multiple of the student patch side " + std::to_string(student_patch_side));
  }
  if (image.rank() != 3) throw DimensionError("align_input needs [C x H x W]");
  const std::size_t factor = teacher_downsample / student_patch_side;
  return bilinear_resize(image, image.dim(1) * factor);
}

// ---- procedural teacher -------------------------------------------------------

ProceduralTeacher::ProceduralTeacher(const TeacherSpec& spec, std::size_t in_channels) {
  TeacherSpec s = spec;
  s.kind = TeacherKind::kProcedural;
  s.validate();
  const std::size_t n = static_cast<std::size_t>(std::countr_zero(spec.downsample_rate));
  Rng rng(derive_seed(spec.seed, 0x7465616368ULL));
  std::size_t in = in_channels;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t out = k + 1 == n ? spec.dim : spec.hidden;
    Stage st{in, out, std::vector<double>(out * in * 9), std::vector<double>(out)};
    const double sd = 1.5 / std::sqrt(9.0 * static_cast<double>(in));
    for (auto& w : st.weights) w = sd * rng.normal();
    for (auto& b : st.bias) b = 0.1 * rng.normal();
    stages_.push_back(std::move(st));
    in = out;
  }
}

Tensor<float> ProceduralTeacher::run(const Tensor<float>& image) const {
  if (image.rank() != 3 || image.dim(1) != image.dim(2)) throw DimensionError("teacher input must be square [C x S x S]");
  if (image.dim(0) != stages_.front().in_ch) throw DimensionError("teacher input channel count mismatch");
  std::size_t side = image.dim(1);
  if (side % (std::size_t{1} << stages_.size()) != 0) {
    throw DimensionError("teacher input side " + std::to_string(side) + " is not divisible by the downsample rate");
  }
  std::vector<double> act(image.data().begin(), image.data().end());
  for (const Stage& st : stages_) {
    const std::size_t out_side = side / 2;
    std::vector<double> next(st.out_ch * out_side * out_side);
    for (std::size_t o = 0; o < st.out_ch; ++o)
      for (std::size_t y = 0; y < out_side; ++y)
        for (std::size_t x = 0; x < out_side; ++x) {
          double acc = st.bias[o];
          for (std::size_t i = 0; i < st.in_ch; ++i)
            for (std::size_t ky = 0; ky < 3; ++ky) {
              const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(2 * y + ky) - 1;
              if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(side)) continue;
              for (std::size_t kx = 0; kx < 3; ++kx) {
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(2 * x + kx) - 1;
                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(side)) continue;
                acc += st.weights[((o * st.in_ch + i) * 3 + ky) * 3 + kx] * act[(i * side + sy) * side + sx];
              }
            }
          next[(o * out_side + y) * out_side + x] = std::tanh(acc);
        }
    act = std::move(next);
    side = out_side;
  }
  // [D x g x g] -> tokens [g*g x D]
  const std::size_t d = stages_.back().out_ch, k = side * side;
  Tensor<float> tokens({k, d});
  for (std::size_t c = 0; c < d; ++c)
    for (std::size_t t = 0; t < k; ++t) tokens[t * d + c] = static_cast<float>(act[c * k + t]);
  return tokens;
}

// ---- facade -------------------------------------------------------------------

Teacher::Teacher(const TeacherSpec& spec, std::size_t in_channels, std::size_t student_patch_side)
    : spec_(spec), patch_side_(student_patch_side), in_channels_(in_channels) {
  spec_.validate();
  if (student_patch_side == 0 || spec_.downsample_rate % student_patch_side != 0) {
    throw ConfigError("teacher.downsample_rate " + std::to_string(spec_.downsample_rate) +
                      " must be a multiple of the student patch side " + std::to_string(student_patch_side));
  }
  if (spec_.kind == TeacherKind::kProcedural) procedural_ = std::make_unique<ProceduralTeacher>(spec_, in_channels);
}

TeacherFeatures Teacher::extract(const Image& image) const {
  const Tensor<float>& px = image.pixels;
  if (px.rank() != 3 || px.dim(0) != in_channels_ || px.dim(1) != px.dim(2) || px.dim(1) % patch_side_ != 0) {
    throw DimensionError("image " + image.id + " has shape " + shape_str(px.shape()) + ", incompatible with the teacher");
  }
  const std::size_t grid = px.dim(1) / patch_side_;
  TeacherFeatures f;
  f.grid_side = grid;
  f.source_id = spec_.source_id();
  if (procedural_) {
    f.tokens = procedural_->run(align_input(px, patch_side_, spec_.downsample_rate));
  } else {
    const auto path = spec_.features_dir / (image.id + ".tvec");
    if (!std::filesystem::exists(path)) throw DataError("missing teacher features: " + path.string());
    f.tokens = load_tensor(path);
    if (f.tokens.shape() != Shape{grid * grid, spec_.dim}) {
      throw DataError(path.string() + ": expected " + shape_str({grid * grid, spec_.dim}) + ", got " +
                      shape_str(f.tokens.shape()));
    }
  }
  for (float v : f.tokens.data()) {
    if (!std::isfinite(v)) throw NumericError("teacher produced non-finite features for " + image.id);
  }
  if (spec_.l2_normalize) {
    const std::size_t d = f.tokens.dim(1);
    for (std::size_t t = 0; t < f.tokens.dim(0); ++t) {
      double n2 = 0;
      for (std::size_t c = 0; c < d; ++c) n2 += double(f.tokens[t * d + c]) * f.tokens[t * d + c];
      const double inv = n2 > 0 ? 1.0 / std::sqrt(n2) : 0.0;
      for (std::size_t c = 0; c < d; ++c) f.tokens[t * d + c] = static_cast<float>(f.tokens[t * d + c] * inv);
    }
  }
  return f;
}

void dump_features(const Teacher& teacher, const std::vector<Image>& images, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json manifest = nlohmann::json::array();
  for (const Image& img : images) {
    const TeacherFeatures f = teacher.extract(img);
    save_tensor(dir / (img.id + ".tvec"), f.tokens);
    manifest.push_back({{"id", img.id}, {"grid_side", f.grid_side}, {"dim", f.tokens.dim(1)}});
  }
  std::ofstream out(dir / "manifest.json", std::ios::trunc);
  if (!out) throw DataError("cannot write manifest in " + dir.string());
  out << manifest.dump(2) << '\n';
}

std::vector<TeacherFeatures> load_feature_dir(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw DataError("missing manifest.json in " + dir.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("manifest.json: " + std::string(e.what()));
  }
  if (!manifest.is_array()) throw DataError("manifest.json: expected an array");
  std::vector<TeacherFeatures> out;
  for (const auto& entry : manifest) {
    if (!entry.is_object() || !entry.contains("id") || !entry.contains("grid_side") || !entry["id"].is_string() ||
        !entry["grid_side"].is_number_unsigned()) {
      throw DataError("manifest.json: malformed entry " + entry.dump());
    }
    TeacherFeatures f;
    f.source_id = entry["id"].get<std::string>();
    f.grid_side = entry["grid_side"].get<std::size_t>();
    f.tokens = load_tensor(dir / (f.source_id + ".tvec"));
    if (f.tokens.rank() != 2 || f.tokens.dim(0) != f.grid_side * f.grid_side) {
      throw DataError(f.source_id + ".tvec: shape " + shape_str(f.tokens.shape()) + " does not match grid side " +
                      std::to_string(f.grid_side));
    }
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace mimkit
