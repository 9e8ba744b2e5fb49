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

#include "mimkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <thread>

#include "mimkit/json_fields.hpp"
#include "mimkit/rng.hpp"

namespace mimkit {

// ---- config -------------------------------------------------------------------

MaskSpec TrainConfig::mask_spec(std::uint64_t seed_override) const {
  return MaskSpec{model.image_side, model.patch_side, mask_block_side, mask_ratio, seed_override};
}

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) throw ConfigError("train.base_lr must be positive");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (total_epochs < 1) throw ConfigError("train.total_epochs must be >= 1");
  if (warmup_epochs >= total_epochs) throw ConfigError("train.warmup_epochs must be < train.total_epochs");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be non-negative");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  loss.validate();
  model.validate();
  teacher.validate();
  const MaskSpec spec = mask_spec(mask_seed);
  spec.validate();
  const std::size_t k = spec.masked_block_count();
  if (k == 0) throw DegenerateMaskError("mask.ratio masks no block; the patch loss needs masked patches");
  if (k >= spec.num_blocks()) throw DegenerateMaskError("mask.ratio masks every block; the encoder needs visible patches");
  if (teacher.dim != model.target_dim) {
    throw ConfigError("teacher.dim (" + std::to_string(teacher.dim) + ") must equal model.target_dim (" +
                      std::to_string(model.target_dim) + ")");
  }
  if (teacher.downsample_rate % model.patch_side != 0) {
    throw ConfigError("teacher.downsample_rate must be a multiple of model.patch_side");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{
      {"train",
       {{"base_lr", c.base_lr},
        {"batch_size", c.batch_size},
        {"warmup_epochs", c.warmup_epochs},
        {"total_epochs", c.total_epochs},
        {"weight_decay", c.weight_decay},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"eps", c.eps},
        {"seed", c.seed},
        {"checkpoint_every", c.checkpoint_every}}},
      {"loss", c.loss},
      {"model", c.model},
      {"teacher", c.teacher},
      {"mask", {{"block_side", c.mask_block_side}, {"ratio", c.mask_ratio}, {"seed", c.mask_seed}}}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  using namespace json_fields;
  if (j.contains("train")) {
    const auto& t = j.at("train");
    check_keys(t, "train",
               {"base_lr", "batch_size", "warmup_epochs", "total_epochs", "weight_decay", "beta1", "beta2", "eps",
                "seed", "checkpoint_every"});
    c.base_lr = get(t, "train", "base_lr", c.base_lr);
    c.batch_size = get(t, "train", "batch_size", c.batch_size);
    c.warmup_epochs = get(t, "train", "warmup_epochs", c.warmup_epochs);
    c.total_epochs = get(t, "train", "total_epochs", c.total_epochs);
    c.weight_decay = get(t, "train", "weight_decay", c.weight_decay);
    c.beta1 = get(t, "train", "beta1", c.beta1);
    c.beta2 = get(t, "train", "beta2", c.beta2);
    c.eps = get(t, "train", "eps", c.eps);
    c.seed = get(t, "train", "seed", c.seed);
    c.checkpoint_every = get(t, "train", "checkpoint_every", c.checkpoint_every);
  }
  if (j.contains("loss")) from_json(j.at("loss"), c.loss);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("teacher")) from_json(j.at("teacher"), c.teacher);
  if (j.contains("mask")) {
    const auto& m = j.at("mask");
    check_keys(m, "mask", {"block_side", "ratio", "seed"});
    c.mask_block_side = get(m, "mask", "block_side", c.mask_block_side);
    c.mask_ratio = get(m, "mask", "ratio", c.mask_ratio);
    c.mask_seed = get(m, "mask", "seed", c.mask_seed);
  }
}

// ---- schedule -----------------------------------------------------------------

double scaled_lr(double base_lr, std::size_t batch_size) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  return base_lr * static_cast<double>(batch_size) / 256.0;
}

double lr_at(double t, double peak_lr, double warmup_epochs, double total_epochs) {
  if (!(warmup_epochs >= 0.0 && warmup_epochs < total_epochs)) throw ConfigError("lr_at: need 0 <= warmup < total");
  t = std::clamp(t, 0.0, total_epochs);
  if (t < warmup_epochs) return peak_lr * t / warmup_epochs;
  const double progress = (t - warmup_epochs) / (total_epochs - warmup_epochs);
  return std::max(0.0, peak_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

double lr_at(double t, const TrainConfig& cfg) {
  return lr_at(t, scaled_lr(cfg.base_lr, cfg.batch_size), static_cast<double>(cfg.warmup_epochs),
               static_cast<double>(cfg.total_epochs));
}

// ---- AdamW --------------------------------------------------------------------

bool decays_by_default(const std::string& name) { return name.size() > 2 && name.ends_with(".w"); }

template <typename T>
void adamw_step(ParamMap<T>& params, const GradMap<T>& grads, OptimizerState<T>& state, double lr,
                const AdamWConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, theta] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) throw ContractError("adamw_step: no gradient for " + name);
    const Tensor<T>& g = git->second;
    if (g.shape() != theta.shape()) {
      throw DimensionError("adamw_step: gradient for " + name + " has shape " + shape_str(g.shape()) + ", parameter " +
                           shape_str(theta.shape()));
    }
    auto [mit, fresh_m] = state.first_moment.try_emplace(name, theta.shape());
    auto [vit, fresh_v] = state.second_moment.try_emplace(name, theta.shape());
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    if (m.shape() != theta.shape() || v.shape() != theta.shape()) throw DimensionError("adamw_step: moment shape mismatch");
    const double wd = (!cfg.decay_filter || cfg.decay_filter(name)) ? cfg.weight_decay : 0.0;
    for (std::size_t i = 0; i < theta.numel(); ++i) {
      const double gi = g[i];
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / bc1, v_hat = vi / bc2;
      const double th = theta[i];
      theta[i] = static_cast<T>(th - lr * (m_hat / (std::sqrt(v_hat) + cfg.eps) + wd * th));
    }
  }
}

// ---- teacher cache ------------------------------------------------------------

std::uint64_t TeacherCache::content_key(const Image& image) {
  // FNV-1a over the shape and the raw float bytes.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ b[i]) * 0x100000001b3ULL;
  };
  for (std::size_t e : image.pixels.shape()) {
    const std::uint64_t v = e;
    feed(&v, sizeof v);
  }
  feed(image.pixels.data().data(), image.pixels.numel() * sizeof(float));
  feed(image.id.data(), image.id.size());
  return h;
}

const TeacherFeatures& TeacherCache::get(const Image& image) {
  const std::uint64_t key = content_key(image);
  {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it != entries_.end()) return it->second;
  }
  TeacherFeatures f = teacher_.extract(image);
  std::lock_guard lock(mu_);
  return entries_.try_emplace(key, std::move(f)).first->second;
}

void TeacherCache::prefetch(const std::vector<Image>& images, std::size_t threads) {
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(images.size(), 1));
  if (workers == 1) {
    for (const auto& img : images) get(img);
    return;
  }
  std::vector<std::exception_ptr> errors(workers);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < images.size(); i += workers) get(images[i]);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

// ---- loop ---------------------------------------------------------------------

template <typename T>
LossValues evaluate_loss(const StudentModel<T>& model, const Tensor<T>& image, const Tensor<T>& targets,
                         const PatchMask& mask, const LossConfig& loss) {
  const ParamMap<T> p = model.bind(nullptr);
  const StudentOutput<T> out = forward(model, p, image, mask, true);
  const Tensor<T> lp = patch_loss(out.z, targets, mask, loss);
  const Tensor<T> lg = global_loss(out.projected, targets, mask, loss);
  const Tensor<T> lt = total_loss(lp, lg, static_cast<T>(loss.lambda));
  return {lp.item(), lg.item(), lt.item()};
}

std::string metrics_csv(const std::vector<StepMetrics>& metrics) {
  std::ostringstream os;
  os << "step,epoch,lr,L_patch,L_global,L_total\n";
  char buf[256];
  for (const auto& m : metrics) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%.17g,%.17g,%.17g,%.17g\n", m.step, m.epoch, m.lr, m.loss.patch,
                  m.loss.global, m.loss.total);
    os << buf;
  }
  return os.str();
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw DataError("write failed: " + path.string());
}

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t step) {
  return dir / ("ckpt_" + std::to_string(step) + ".bin");
}

// kFullObjective = false removes the projector, the global loss and the
// multi-block aggregation from the step entirely.
template <bool kFullObjective>
TrainResult run_training(const TrainConfig& cfg, const std::vector<Image>& images, const std::filesystem::path& out_dir,
                         const TrainOptions& options) {
  cfg.validate();
  if (images.empty()) throw DataError("training needs at least one image");
  const ModelConfig& mc = cfg.model;
  for (const auto& img : images) {
    if (img.pixels.shape() != Shape{mc.channels, mc.image_side, mc.image_side}) {
      throw DataError("image " + img.id + " has shape " + shape_str(img.pixels.shape()) + ", model expects " +
                      shape_str({mc.channels, mc.image_side, mc.image_side}));
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw DataError("cannot create " + out_dir.string() + ": " + ec.message());
  write_text(out_dir / "config.json", nlohmann::json(cfg).dump(2) + "\n");

  const Teacher teacher(cfg.teacher, mc.channels, mc.patch_side);
  TeacherCache cache(teacher);
  cache.prefetch(images, options.threads);

  TrainResult result{{}, StudentModel<float>(mc, derive_seed(cfg.seed, 0x6d6f64656cULL)), 0};
  StudentModel<float>& model = result.model;
  OptimizerState<float> opt;
  const AdamWConfig adam{cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay, decays_by_default};
  const LossConfig& lc = cfg.loss;

  const std::size_t n = images.size();
  const std::size_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  result.steps_per_epoch = per_epoch;
  const std::size_t total_steps = per_epoch * cfg.total_epochs;

  std::vector<std::size_t> order(n);
  for (std::size_t epoch = 0; epoch < cfg.total_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle(derive_seed(cfg.seed, 0x73687566ULL, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[shuffle.below(i)]);

    for (std::size_t b = 0; b < per_epoch; ++b) {
      const std::size_t step = epoch * per_epoch + b;
      const double t = static_cast<double>(step) / static_cast<double>(per_epoch);
      const double lr = lr_at(t, cfg);
      const std::size_t begin = b * cfg.batch_size, end = std::min(n, begin + cfg.batch_size);

      Tape<float> tape;
      const ParamMap<float> p = model.bind(&tape);
      Tensor<float> batch_loss;
      LossValues sums;
      for (std::size_t slot = begin; slot < end; ++slot) {
        const Image& img = images[order[slot]];
        const PatchMask mask = generate_mask(cfg.mask_spec(mask_seed_for(cfg.mask_seed, step, slot - begin)));
        const Tensor<float>& y = cache.get(img).tokens;
        StudentOutput<float> out = encode_visible(model, p, patch_embed(model, p, img.pixels), mask);
        Tensor<float> loss;
        if constexpr (kFullObjective) {
          out.h = aggregate_multi_block(out.layers, mc);
          out.z = decode(model, p, out.h, mask);
          const Tensor<float> lp = patch_loss(out.z, y, mask, lc);
          const Tensor<float> lg = global_loss(project_global(model, p, out.layers.back()), y, mask, lc);
          loss = total_loss(lp, lg, static_cast<float>(lc.lambda));
          sums.patch += lp.item();
          sums.global += lg.item();
        } else {
          out.z = decode(model, p, out.layers.back(), mask);
          loss = patch_loss(out.z, y, mask, lc);
          sums.patch += loss.item();
        }
        sums.total += loss.item();
        batch_loss = batch_loss.empty() ? loss : add(batch_loss, loss);
      }
      const double count = static_cast<double>(end - begin);
      batch_loss = scale(batch_loss, static_cast<float>(1.0 / count));
      if (!std::isfinite(batch_loss.item())) {
        throw NumericError("non-finite loss at step " + std::to_string(step));
      }
      const GradMap<float> grads = tape.backward(batch_loss);
      adamw_step(model.params(), grads, opt, lr, adam);

      StepMetrics m{step, epoch, lr, {sums.patch / count, sums.global / count, sums.total / count}};
      result.metrics.push_back(m);
      if (options.on_step) options.on_step(m);
      if (options.write_checkpoints && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
          step + 1 != total_steps) {
        save_checkpoint(checkpoint_path(out_dir, step + 1), model);
      }
    }
  }
  write_text(out_dir / "metrics.csv", metrics_csv(result.metrics));
  if (options.write_checkpoints) save_checkpoint(checkpoint_path(out_dir, total_steps), model);
  return result;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const std::vector<Image>& images, const std::filesystem::path& out_dir,
                  const TrainOptions& options) {
  return run_training<true>(cfg, images, out_dir, options);
}

TrainResult train_baseline(const TrainConfig& cfg, const std::vector<Image>& images,
                           const std::filesystem::path& out_dir, const TrainOptions& options) {
  if (cfg.loss.lambda != 0.0 || cfg.model.multi_block) {
    throw ConfigError("train_baseline needs loss.lambda == 0 and model.multi_block == false");
  }
  return run_training<false>(cfg, images, out_dir, options);
}

#define MIMKIT_INSTANTIATE(T)                                                                                \
  template void adamw_step(ParamMap<T>&, const GradMap<T>&, OptimizerState<T>&, double, const AdamWConfig&); \
  template LossValues evaluate_loss(const StudentModel<T>&, const Tensor<T>&, const Tensor<T>&, const PatchMask&, \
                                    const LossConfig&);

MIMKIT_INSTANTIATE(float)
MIMKIT_INSTANTIATE(double)

#undef MIMKIT_INSTANTIATE

}  // namespace mimkit
