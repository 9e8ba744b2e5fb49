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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "doctest.h"
#include "mimkit/errors.hpp"
#include "mimkit/image_io.hpp"
#include "mimkit/trainer.hpp"

using namespace mimkit;
namespace fs = std::filesystem;

namespace {

TrainConfig small_train() {
  TrainConfig c;
  c.model.image_side = 16;
  c.model.patch_side = 4;
  c.model.embed_dim = 8;
  c.model.dec_width = 8;
  c.teacher.downsample_rate = 4;
  c.mask_block_side = 8;
  c.batch_size = 2;
  c.total_epochs = 3;
  c.warmup_epochs = 1;
  c.base_lr = 0.5;
  c.checkpoint_every = 2;
  return c;
}

std::vector<Image> small_images(std::size_t n = 5) {
  std::vector<Image> images = synthetic_images(n, 16, 3, 1);
  for (auto& img : images) img.pixels = normalize_image(img.pixels, 0.5f, 0.5f);
  return images;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mimkit_test_trainer_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST_CASE("linear scaling rule") {
  CHECK(std::abs(scaled_lr(1.5e-4, 4096) - 2.4e-3) < 1e-15);
  CHECK(scaled_lr(1.5e-4, 256) == 1.5e-4);
  CHECK(scaled_lr(1.0, 1) == 1.0 / 256);
  CHECK_THROWS_AS(scaled_lr(1.0, 0), ConfigError);
}

TEST_CASE("warmup and cosine schedule") {
  const double peak = 2.4e-3;
  CHECK(lr_at(0, peak, 40, 400) == 0.0);
  CHECK(lr_at(20, peak, 40, 400) == doctest::Approx(peak / 2).epsilon(1e-15));
  CHECK(lr_at(40, peak, 40, 400) == peak);
  CHECK(std::abs(lr_at(40 - 1e-9, peak, 40, 400) - lr_at(40 + 1e-9, peak, 40, 400)) < 1e-12);
  CHECK(lr_at(220, peak, 40, 400) == doctest::Approx(peak / 2).epsilon(1e-12));
  CHECK(lr_at(400, peak, 40, 400) == 0.0);
  double prev = peak;
  for (double t = 40; t <= 400; t += 0.5) {
    const double lr = lr_at(t, peak, 40, 400);
    CHECK(lr <= prev);
    CHECK(lr >= 0.0);
    prev = lr;
  }
  CHECK(lr_at(0.5, 1.0, 0, 1) == doctest::Approx(0.5));
  CHECK_THROWS_AS(lr_at(1, 1.0, 5, 5), ConfigError);
  TrainConfig cfg;
  CHECK(lr_at(40, cfg) == scaled_lr(cfg.base_lr, cfg.batch_size));
}

TEST_CASE("AdamW hand examples") {
  const AdamWConfig no_decay{0.9, 0.95, 1e-8, 0.0, nullptr};
  {
    ParamMap<double> p{{"x.w", Tensor<double>({1}, {0.0})}};
    OptimizerState<double> st;
    adamw_step(p, GradMap<double>{{"x.w", Tensor<double>({1}, {1.0})}}, st, 0.1, no_decay);
    CHECK(p.at("x.w")[0] == doctest::Approx(-0.1).epsilon(1e-9));
    CHECK(st.step == 1);
    CHECK(st.first_moment.at("x.w").shape() == Shape{1});
  }
  {
    ParamMap<double> p{{"x.w", Tensor<double>({2}, {1.5, -2.0})}};
    OptimizerState<double> st;
    for (int i = 0; i < 5; ++i) adamw_step(p, GradMap<double>{{"x.w", Tensor<double>({2})}}, st, 0.1, no_decay);
    CHECK(p.at("x.w").values() == std::vector<double>{1.5, -2.0});
  }
  {
    const AdamWConfig decay{0.9, 0.95, 1e-8, 0.05, nullptr};
    ParamMap<double> p{{"x.w", Tensor<double>({1}, {2.0})}};
    OptimizerState<double> st;
    adamw_step(p, GradMap<double>{{"x.w", Tensor<double>({1})}}, st, 0.1, decay);
    CHECK(p.at("x.w")[0] == doctest::Approx(2.0 * (1 - 0.1 * 0.05)).epsilon(1e-15));
  }
  {
    const AdamWConfig filtered{0.9, 0.95, 1e-8, 0.05, decays_by_default};
    ParamMap<double> p{{"x.w", Tensor<double>({1}, {2.0})}, {"x.b", Tensor<double>({1}, {2.0})}};
    OptimizerState<double> st;
    adamw_step(p, GradMap<double>{{"x.w", Tensor<double>({1})}, {"x.b", Tensor<double>({1})}}, st, 0.1, filtered);
    CHECK(p.at("x.w")[0] < 2.0);
    CHECK(p.at("x.b")[0] == 2.0);
  }
  ParamMap<double> p{{"x.w", Tensor<double>({2})}};
  OptimizerState<double> st;
  CHECK_THROWS_AS(adamw_step(p, GradMap<double>{{"x.w", Tensor<double>({3})}}, st, 0.1, no_decay), DimensionError);
  CHECK(decays_by_default("enc.0.attn.qkv.w"));
  CHECK_FALSE(decays_by_default("enc.0.ln1.g"));
  CHECK_FALSE(decays_by_default("mask_token"));
}

TEST_CASE("step-0 loss is finite across 100 seeds") {
  const TrainConfig cfg = small_train();
  const Teacher teacher(cfg.teacher, 3, cfg.model.patch_side);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const StudentModel<float> model(cfg.model, seed);
    const Image img = synthetic_images(1, 16, 3, seed).front();
    const PatchMask mask = generate_mask(cfg.mask_spec(seed));
    const LossValues v = evaluate_loss(model, img.pixels, teacher.extract(img).tokens, mask, cfg.loss);
    CHECK(std::isfinite(v.total));
    CHECK(v.patch > 0.0);
    CHECK(v.total == doctest::Approx(v.patch + cfg.loss.lambda * v.global));
  }
}

TEST_CASE("teacher cache is content addressed") {
  const TrainConfig cfg = small_train();
  const Teacher teacher(cfg.teacher, 3, cfg.model.patch_side);
  const std::vector<Image> images = small_images(6);
  TeacherCache serial(teacher), parallel(teacher);
  serial.prefetch(images, 1);
  parallel.prefetch(images, 4);
  CHECK(serial.size() == 6);
  for (const auto& img : images) {
    const std::vector<float> first = serial.get(img).tokens.values();
    CHECK(serial.get(img).tokens.values() == first);
    CHECK(parallel.get(img).tokens.values() == first);
    CHECK(teacher.extract(img).tokens.values() == first);
  }
  CHECK(serial.size() == 6);
  CHECK(TeacherCache::content_key(images[0]) != TeacherCache::content_key(images[1]));
  Image tweaked = images[0];
  tweaked.pixels[5] += 1e-3f;
  CHECK(TeacherCache::content_key(tweaked) != TeacherCache::content_key(images[0]));
}

TEST_CASE("config validation") {
  TrainConfig c = small_train();
  CHECK_NOTHROW(c.validate());
  c.teacher.dim = 8;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_train();
  c.mask_ratio = 0.99;
  CHECK_THROWS_AS(c.validate(), DegenerateMaskError);
  c = small_train();
  c.mask_ratio = 0.05;
  CHECK_THROWS_AS(c.validate(), DegenerateMaskError);
  c = small_train();
  c.warmup_epochs = c.total_epochs;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_train();
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = small_train();
  c.teacher.downsample_rate = 2;
  CHECK_THROWS_AS(c.validate(), ConfigError);

  const TrainConfig back = nlohmann::json(small_train()).get<TrainConfig>();
  CHECK(nlohmann::json(back) == nlohmann::json(small_train()));
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"train":{"lr":1}})").get<TrainConfig>(), ConfigError);
  CHECK_THROWS_AS(nlohmann::json::parse(R"({"train":{"batch_size":-2}})").get<TrainConfig>(), ConfigError);
}

TEST_CASE("training writes artifacts and is deterministic") {
  const TrainConfig cfg = small_train();
  const std::vector<Image> images = small_images();
  const fs::path a = scratch("a"), b = scratch("b");
  const TrainResult ra = train(cfg, images, a);
  const TrainResult rb = train(cfg, images, b);
  CHECK(ra.steps_per_epoch == 3);
  REQUIRE(ra.metrics.size() == 9);
  CHECK(file_bytes(a / "metrics.csv") == file_bytes(b / "metrics.csv"));
  CHECK(file_bytes(a / "ckpt_9.bin") == file_bytes(b / "ckpt_9.bin"));
  for (const char* f : {"config.json", "ckpt_2.bin", "ckpt_4.bin", "ckpt_8.bin"}) CHECK(fs::exists(a / f));
  CHECK(ra.metrics[0].lr == 0.0);
  CHECK(ra.metrics[3].lr == doctest::Approx(scaled_lr(cfg.base_lr, cfg.batch_size)));
  for (const auto& m : ra.metrics) CHECK(std::isfinite(m.loss.total));

  TrainConfig other = cfg;
  other.seed = 1;
  CHECK(train(other, images, scratch("c")).metrics.back().loss.total != ra.metrics.back().loss.total);
  for (const auto& p : {a, b, scratch("c")}) fs::remove_all(p);
}

TEST_CASE("baseline build matches the reduced configuration") {
  TrainConfig cfg = small_train();
  cfg.loss.lambda = 0;
  cfg.model.multi_block = false;
  const std::vector<Image> images = small_images();
  const fs::path full = scratch("full"), base = scratch("base");
  const TrainResult rf = train(cfg, images, full);
  const TrainResult rb = train_baseline(cfg, images, base);
  REQUIRE(rf.metrics.size() == rb.metrics.size());
  for (std::size_t i = 0; i < rf.metrics.size(); ++i) {
    CHECK(rf.metrics[i].lr == rb.metrics[i].lr);
    CHECK(rf.metrics[i].loss.patch == rb.metrics[i].loss.patch);
    CHECK(rf.metrics[i].loss.total == rb.metrics[i].loss.total);
    CHECK(rb.metrics[i].loss.global == 0.0);
  }
  for (const auto& [name, t] : rf.model.params()) CHECK(t.values() == rb.model.params().at(name).values());

  TrainConfig full_objective = small_train();
  CHECK_THROWS_AS(train_baseline(full_objective, images, base), ConfigError);
  fs::remove_all(full);
  fs::remove_all(base);
}

TEST_CASE("training rejects bad inputs before writing") {
  const TrainConfig cfg = small_train();
  const fs::path out = scratch("bad");
  CHECK_THROWS_AS(train(cfg, {}, out), DataError);
  CHECK_THROWS_AS(train(cfg, synthetic_images(2, 32, 3, 0), out), DataError);
  CHECK_FALSE(fs::exists(out));
}
