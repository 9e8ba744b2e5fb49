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

#include "mimkit/run.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mimkit/errors.hpp"
#include "mimkit/json_fields.hpp"

namespace mimkit {

void DataConfig::validate() const {
  if (images_dir.empty() && synthetic_count == 0) throw ConfigError("data.synthetic_count must be >= 1");
  if (!std::isfinite(image_mean)) throw ConfigError("data.image_mean must be finite");
  if (!(image_std > 0.0f) || !std::isfinite(image_std)) throw ConfigError("data.image_std must be positive");
}

void RunConfig::validate() const {
  data.validate();
  train.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json(c.train);
  j["data"] = {{"images_dir", c.data.images_dir},
               {"synthetic_count", c.data.synthetic_count},
               {"synthetic_seed", c.data.synthetic_seed},
               {"image_mean", c.data.image_mean},
               {"image_std", c.data.image_std}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  using namespace json_fields;
  check_keys(j, "config", {"train", "loss", "model", "teacher", "mask", "data"});
  from_json(j, c.train);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    check_keys(d, "data", {"images_dir", "synthetic_count", "synthetic_seed", "image_mean", "image_std"});
    c.data.images_dir = get(d, "data", "images_dir", c.data.images_dir);
    c.data.synthetic_count = get(d, "data", "synthetic_count", c.data.synthetic_count);
    c.data.synthetic_seed = get(d, "data", "synthetic_seed", c.data.synthetic_seed);
    c.data.image_mean = get(d, "data", "image_mean", c.data.image_mean);
    c.data.image_std = get(d, "data", "image_std", c.data.image_std);
  }
}

RunConfig parse_run_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  try {
    from_json(j, c);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::vector<Image> load_run_images(const RunConfig& cfg) {
  if (!cfg.data.images_dir.empty()) return load_images(cfg.data.images_dir, cfg.data.image_mean, cfg.data.image_std);
  const ModelConfig& m = cfg.train.model;
  std::vector<Image> images = synthetic_images(cfg.data.synthetic_count, m.image_side, m.channels, cfg.data.synthetic_seed);
  for (auto& img : images) img.pixels = normalize_image(img.pixels, cfg.data.image_mean, cfg.data.image_std);
  return images;
}

void validate_lambdas(const std::vector<double>& lambdas) {
  if (lambdas.size() < 2) throw ConfigError("ablate_lambda needs at least two lambda values");
  for (double l : lambdas) {
    if (!(l >= 0.0) || !std::isfinite(l)) throw ConfigError("ablate_lambda: lambda values must be finite and >= 0");
  }
}

std::vector<AblationRow> ablate_lambda(const TrainConfig& cfg, const std::vector<Image>& images,
                                       const std::vector<double>& lambdas, const std::filesystem::path& out_dir,
                                       const TrainOptions& options) {
  validate_lambdas(lambdas);
  std::vector<AblationRow> rows;
  for (std::size_t i = 0; i < lambdas.size(); ++i) {
    TrainConfig run = cfg;
    run.loss.lambda = lambdas[i];
    const TrainResult r = train(run, images, out_dir / ("lambda_" + std::to_string(i)), options);
    rows.push_back({lambdas[i], r.metrics.front().loss, r.metrics.back().loss});
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "lambda,L_patch_first,L_global_first,L_total_first,L_patch_final,L_global_final,L_total_final\n";
  char buf[320];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.lambda, r.first.patch,
                  r.first.global, r.first.total, r.last.patch, r.last.global, r.last.total);
    os << buf;
  }
  return os.str();
}

Tensor<double> student_tokens(const StudentModel<float>& model, const Image& image) {
  const ModelConfig& c = model.config();
  if (image.pixels.shape() != Shape{c.channels, c.image_side, c.image_side}) {
    throw DataError("image " + image.id + " has shape " + shape_str(image.pixels.shape()));
  }
  const ParamMap<float> p = model.bind(nullptr);
  const PatchMask mask = PatchMask::all_visible(c.grid_side());
  const StudentOutput<float> out = encode_visible(model, p, patch_embed(model, p, image.pixels), mask);
  return out.layers.back().cast<double>();
}

}  // namespace mimkit
