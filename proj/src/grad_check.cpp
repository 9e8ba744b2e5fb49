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

#include "mimkit/grad_check.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "mimkit/errors.hpp"
#include "mimkit/image_io.hpp"
#include "mimkit/masking.hpp"
#include "mimkit/rng.hpp"

namespace mimkit {

ModelConfig GradCheckConfig::tiny_model() {
  ModelConfig m;
  m.image_side = 16;
  m.channels = 3;
  m.patch_side = 4;
  m.embed_dim = 8;
  m.enc_depth = 2;
  m.enc_heads = 2;
  m.dec_depth = 1;
  m.dec_width = 8;
  m.dec_heads = 2;
  m.target_dim = 16;
  return m;
}

TeacherSpec GradCheckConfig::tiny_teacher() {
  TeacherSpec t;
  t.downsample_rate = 4;
  t.dim = 16;
  return t;
}

void GradCheckConfig::validate() const {
  model.validate();
  loss.validate();
  teacher.validate();
  if (model.embed_dim > 16) throw ConfigError("grad_check: model.embed_dim must be <= 16");
  if (teacher.dim != model.target_dim) throw ConfigError("grad_check: teacher.dim must equal model.target_dim");
  if (!(h > 0.0)) throw ConfigError("grad_check: h must be positive");
  const MaskSpec spec{model.image_side, model.patch_side, mask_block_side, mask_ratio, 0};
  spec.validate();
  if (spec.masked_block_count() == 0 || spec.masked_block_count() >= spec.num_blocks()) {
    throw DegenerateMaskError("grad_check: mask must hide some but not all blocks");
  }
}

nlohmann::json GradCheckReport::to_json() const {
  return {{"max_rel_err", max_rel_err},       {"worst_param", worst_param},     {"worst_index", worst_index},
          {"worst_analytic", worst_analytic}, {"worst_numeric", worst_numeric}, {"scalars_checked", scalars_checked},
          {"loss", loss},                     {"seconds", seconds}};
}

namespace {

double loss_value(const StudentModel<double>& model, const Tensor<double>& image, const Tensor<double>& y,
                  const PatchMask& mask, const LossConfig& lc, Tape<double>* tape, Tensor<double>* out) {
  const ParamMap<double> p = model.bind(tape);
  const StudentOutput<double> o = forward(model, p, image, mask, true);
  Tensor<double> l = total_loss(patch_loss(o.z, y, mask, lc), global_loss(o.projected, y, mask, lc), lc.lambda);
  if (out) *out = l;
  return l.item();
}

}  // namespace

GradCheckReport grad_check(const GradCheckConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  const ModelConfig& mc = cfg.model;

  StudentModel<double> model(mc, derive_seed(cfg.seed, 1));
  const Image img = synthetic_images(1, mc.image_side, mc.channels, derive_seed(cfg.seed, 2)).front();
  const Teacher teacher(cfg.teacher, mc.channels, mc.patch_side);
  const Tensor<double> y = teacher.extract(img).tokens.cast<double>();
  const Tensor<double> image = img.pixels.cast<double>();
  const PatchMask mask =
      generate_mask(MaskSpec{mc.image_side, mc.patch_side, cfg.mask_block_side, cfg.mask_ratio, derive_seed(cfg.seed, 3)});

  GradCheckReport report;
  Tape<double> tape;
  if (cfg.instrument) cfg.instrument(tape);
  Tensor<double> loss;
  report.loss = loss_value(model, image, y, mask, cfg.loss, &tape, &loss);
  const GradMap<double> analytic = tape.backward(loss);

  for (auto& [name, theta] : model.params()) {
    const Tensor<double>& g = analytic.at(name);
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double x0 = theta[i];
      theta[i] = x0 + cfg.h;
      const double fp = loss_value(model, image, y, mask, cfg.loss, nullptr, nullptr);
      theta[i] = x0 - cfg.h;
      const double fm = loss_value(model, image, y, mask, cfg.loss, nullptr, nullptr);
      theta[i] = x0;
      const double numeric = (fp - fm) / (2 * cfg.h);
      const double err = std::abs(g[i] - numeric) / std::max({std::abs(g[i]), std::abs(numeric), cfg.rel_floor});
      ++report.scalars_checked;
      if (!std::isfinite(err)) throw NumericError("grad_check: non-finite gradient for " + name);
      if (err > report.max_rel_err || report.worst_param.empty()) {
        report.max_rel_err = err;
        report.worst_param = name;
        report.worst_index = i;
        report.worst_analytic = g[i];
        report.worst_numeric = numeric;
      }
    }
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace mimkit
