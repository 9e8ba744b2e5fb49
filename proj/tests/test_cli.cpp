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

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include "doctest.h"
#include "mimkit/errors.hpp"
#include "mimkit/image_io.hpp"
#include "mimkit/run.hpp"

using namespace mimkit;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("mimkit_test_cli_" + name);
  fs::remove_all(p);
  return p;
}

void write_bytes(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary);
  out << bytes;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(MIMKIT_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const char* kTinyConfig = R"({
  "train": {"total_epochs": 2, "warmup_epochs": 1, "batch_size": 2, "base_lr": 0.5},
  "model": {"image_side": 16, "patch_side": 4, "embed_dim": 8, "dec_width": 8},
  "mask": {"block_side": 8},
  "teacher": {"downsample_rate": 4},
  "data": {"synthetic_count": 4}
})";

}  // namespace

TEST_CASE("PNM parsing") {
  const fs::path dir = scratch("pnm");
  fs::create_directories(dir);
  write_bytes(dir / "white.pgm", std::string("P5\n2 2\n255\n") + std::string(4, '\xff'));
  const Tensor<float> w = read_pnm(dir / "white.pgm");
  CHECK(w.shape() == Shape{1, 2, 2});
  for (float v : w.data()) CHECK(v == 1.0f);

  write_bytes(dir / "red.ppm", std::string("P6\n# comment\n1 1\n255\n") + std::string{'\xff', '\x00', '\x00'});
  CHECK(read_pnm(dir / "red.ppm").values() == std::vector<float>{1, 0, 0});

  write_bytes(dir / "deep.pgm", std::string("P5 1 1 65535\n") + std::string{'\x80', '\x00'});
  CHECK(read_pnm(dir / "deep.pgm")[0] == doctest::Approx(32768.0 / 65535.0));

  write_bytes(dir / "short.pgm", std::string("P5\n2 2\n255\n") + std::string(3, '\x00'));
  CHECK_THROWS_AS(read_pnm(dir / "short.pgm"), DataError);
  write_bytes(dir / "magic.pgm", "P2\n1 1\n255\n0");
  CHECK_THROWS_AS(read_pnm(dir / "magic.pgm"), DataError);
  write_bytes(dir / "maxval.pgm", std::string("P5\n1 1\n0\n") + '\x00');
  CHECK_THROWS_AS(read_pnm(dir / "maxval.pgm"), DataError);
  CHECK_THROWS_AS(read_pnm(dir / "absent.pgm"), DataError);
  fs::remove_all(dir);
}

TEST_CASE("PNM round trip recovers quantized values") {
  const fs::path dir = scratch("rt");
  fs::create_directories(dir);
  const Tensor<float> img = synthetic_images(1, 8, 3, 4).front().pixels;
  write_pnm(dir / "a.ppm", img);
  const Tensor<float> back = read_pnm(dir / "a.ppm");
  REQUIRE(back.shape() == img.shape());
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(back[i] == static_cast<float>(std::lround(img[i] * 255.0f)) / 255.0f);
  fs::remove_all(dir);
}

TEST_CASE("image directory loading normalizes and sorts") {
  const fs::path dir = scratch("dir");
  fs::create_directories(dir);
  write_bytes(dir / "b.pgm", std::string("P5\n2 2\n255\n") + std::string(4, '\xff'));
  write_bytes(dir / "a.pgm", std::string("P5\n2 2\n255\n") + std::string(4, '\x00'));
  write_bytes(dir / "notes.txt", "ignored");
  const std::vector<Image> images = load_images(dir);
  REQUIRE(images.size() == 2);
  CHECK(images[0].id == "a");
  CHECK(images[0].pixels[0] == -1.0f);
  CHECK(images[1].pixels[0] == 1.0f);
  write_bytes(dir / "c.pgm", std::string("P5\n1 1\n255\n") + '\x00');
  CHECK_THROWS_AS(load_images(dir), DataError);
  fs::remove_all(dir);
}

TEST_CASE("run config: defaults, overrides and field-level errors") {
  const RunConfig defaults = parse_run_config("{}");
  CHECK(defaults.data.image_mean == 0.5f);
  CHECK(defaults.train.loss.beta == 2.0);
  const RunConfig tiny = parse_run_config(kTinyConfig);
  CHECK(tiny.train.model.embed_dim == 8);
  CHECK(load_run_images(tiny).size() == 4);
  CHECK(nlohmann::json(parse_run_config(nlohmann::json(tiny).dump())) == nlohmann::json(tiny));

  auto message = [](const std::string& text) {
    try {
      parse_run_config(text);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message(R"({"train":{"batch_size":"8"}})").find("train.batch_size") != std::string::npos);
  CHECK(message(R"({"loss":{"beta":0}})").find("beta") != std::string::npos);
  CHECK(message(R"({"data":{"image_std":0}})").find("data.image_std") != std::string::npos);
  CHECK(message(R"({"extra":{}})").find("extra") != std::string::npos);
  CHECK(message("{not json").find("JSON") != std::string::npos);
  CHECK_THROWS_AS(validate_lambdas({0.5}), ConfigError);
  CHECK_THROWS_AS(validate_lambdas({0.5, -1}), ConfigError);
}

TEST_CASE("lambda sweep shares the seed") {
  const RunConfig cfg = parse_run_config(kTinyConfig);
  const auto images = load_run_images(cfg);
  TrainOptions opts;
  opts.write_checkpoints = false;
  const fs::path a = scratch("sweep_a"), b = scratch("sweep_b");
  const auto ra = ablate_lambda(cfg.train, images, {0, 0.5, 1}, a, opts);
  const auto rb = ablate_lambda(cfg.train, images, {0, 1}, b, opts);
  REQUIRE(ra.size() == 3);
  CHECK(ra[0].last.total == rb[0].last.total);
  CHECK(ra[2].last.total == rb[1].last.total);
  CHECK(ra[0].first.patch == ra[1].first.patch);
  CHECK(ablation_csv(ra).find("lambda,") == 0);
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("command line: exit codes and outputs") {
  const fs::path dir = scratch("run");
  fs::create_directories(dir);
  write_bytes(dir / "tiny.json", kTinyConfig);
  write_bytes(dir / "bad.json", R"({"train":{"batch_size":0}})");
  const std::string cfg = "--config " + (dir / "tiny.json").string();

  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("--config " + (dir / "bad.json").string() + " --out " + (dir / "x").string() + " pretrain") == 2);
  CHECK_FALSE(fs::exists(dir / "x"));
  CHECK(run_cli(cfg + " --out " + (dir / "y").string() + " ablate-lambda --lambdas 1") == 2);
  CHECK_FALSE(fs::exists(dir / "y"));

  CHECK(run_cli(cfg + " --out " + (dir / "p1").string() + " pretrain") == 0);
  CHECK(run_cli(cfg + " --out " + (dir / "p2").string() + " pretrain") == 0);
  CHECK(read_bytes(dir / "p1/metrics.csv") == read_bytes(dir / "p2/metrics.csv"));
  CHECK(read_bytes(dir / "p1/metrics.csv").rfind("step,epoch,lr,L_patch,L_global,L_total\n", 0) == 0);

  CHECK(run_cli(cfg + " --out " + (dir / "f").string() + " dump-features") == 0);
  CHECK(fs::exists(dir / "f/features/manifest.json"));
  CHECK(run_cli(cfg + " --out " + (dir / "f").string() + " diversity --features " + (dir / "f/features").string()) == 0);
  CHECK(fs::exists(dir / "f/diversity.json"));
  CHECK(run_cli(cfg + " --out " + (dir / "f").string() + " heatmap --query 3 --features " + (dir / "f/features").string()) == 0);
  CHECK(fs::exists(dir / "f/heatmap_synth_0000_3.pgm"));
  CHECK(run_cli(cfg + " --out " + (dir / "f").string() + " pca --components 2 --checkpoint " + (dir / "p1/ckpt_4.bin").string()) == 0);
  CHECK(fs::exists(dir / "f/pca_synth_0000.tvec"));
  CHECK(run_cli(cfg + " --out " + (dir / "f").string() + " heatmap --query 99 --features " + (dir / "f/features").string()) == 2);
  CHECK(run_cli(cfg + " --out " + (dir / "f").string() + " diversity --features " + (dir / "nowhere").string()) == 3);
  fs::remove_all(dir);
}
