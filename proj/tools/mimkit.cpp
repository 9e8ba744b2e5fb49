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

// mimkit command-line driver.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mimkit/analysis.hpp"
#include "mimkit/diversity.hpp"
#include "mimkit/errors.hpp"
#include "mimkit/grad_check.hpp"
#include "mimkit/masking.hpp"
#include "mimkit/run.hpp"
#include "mimkit/teacher.hpp"
#include "mimkit/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace mimkit;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Globals {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint64_t> mask_seed;
  std::string images;
  std::size_t threads = 1;
};

RunConfig resolve(const Globals& g) {
  RunConfig cfg;
  if (!g.config.empty()) cfg = load_run_config(g.config);
  if (g.seed) {
    cfg.train.seed = *g.seed;
    cfg.train.teacher.seed = *g.seed;
  }
  if (!g.images.empty()) cfg.data.images_dir = g.images;
  if (g.mask_seed) cfg.train.mask_seed = *g.mask_seed;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Globals& g) {
  if (g.out.empty()) throw ConfigError("--out is required for this command");
  std::error_code ec;
  fs::create_directories(g.out, ec);
  if (ec) throw DataError("cannot create " + g.out + ": " + ec.message());
  return g.out;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << text;
}

std::vector<TeacherFeatures> features_for(const RunConfig& cfg, const std::string& features_dir,
                                          std::size_t threads) {
  if (!features_dir.empty()) return load_feature_dir(features_dir);
  const Teacher teacher(cfg.train.teacher, cfg.train.model.channels, cfg.train.model.patch_side);
  const std::vector<Image> images = load_run_images(cfg);
  TeacherCache cache(teacher);
  cache.prefetch(images, threads);
  std::vector<TeacherFeatures> out;
  for (const auto& img : images) {
    TeacherFeatures f = cache.get(img);
    f.source_id = img.id;
    out.push_back(std::move(f));
  }
  return out;
}

// Token grids for heatmap and pca: a student checkpoint, a feature dump, or
// the configured teacher.
struct TokenGrid {
  std::string id;
  Tensor<double> tokens;
  std::size_t grid_side = 0;
};

TokenGrid pick_tokens(const RunConfig& cfg, const std::string& features_dir, const std::string& checkpoint,
                      const std::string& id, std::size_t threads) {
  if (!checkpoint.empty()) {
    const StudentModel<float> model = load_checkpoint(checkpoint);
    RunConfig run = cfg;
    run.train.model = model.config();
    for (const auto& img : load_run_images(run)) {
      if (id.empty() || img.id == id) return {img.id, student_tokens(model, img), model.config().grid_side()};
    }
  } else if (fs::is_regular_file(features_dir)) {
    Tensor<double> tokens = load_tensor(features_dir).cast<double>();
    if (tokens.rank() != 2) throw DataError(features_dir + ": expected a [K x D] tensor");
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(tokens.dim(0)))));
    if (side * side != tokens.dim(0)) throw DataError(features_dir + ": token count is not a square grid");
    return {fs::path(features_dir).stem().string(), std::move(tokens), side};
  } else {
    for (auto& f : features_for(cfg, features_dir, threads)) {
      if (id.empty() || f.source_id == id) return {f.source_id, f.tokens.cast<double>(), f.grid_side};
    }
  }
  throw DataError(id.empty() ? "no images found" : "no image with id " + id);
}

int run(int argc, char** argv) {
  CLI::App app{"mimkit: masked image modeling toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--out", g.out, "output directory");
  app.add_option("--seed", g.seed, "override train.seed and teacher.seed");
  app.add_option("--images", g.images, "directory of P5/P6 images (default: synthetic)")->check(CLI::ExistingDirectory);
  app.add_option("--mask-seed", g.mask_seed, "override mask.seed");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);

  auto* pretrain = app.add_subcommand("pretrain", "train the student");
  bool reduced = false;
  pretrain->add_flag("--reduced", reduced, "baseline step without global loss or aggregation");

  auto* dump = app.add_subcommand("dump-features", "write teacher tokens for every image");
  std::string teacher_kind;
  dump->add_option("--teacher", teacher_kind, "teacher kind")->check(CLI::IsMember({"procedural", "file"}));

  auto* diversity = app.add_subcommand("diversity", "token diversity of a teacher's outputs");
  std::string div_features;
  diversity->add_option("--features", div_features, "feature dump directory (default: run the teacher)");

  auto* heat = app.add_subcommand("heatmap", "cosine-similarity heat map for one query token");
  std::string heat_features, heat_ckpt, heat_id;
  std::size_t query = 0;
  heat->add_option("--features", heat_features, "feature dump directory or one .tvec file");
  heat->add_option("--checkpoint", heat_ckpt, "student checkpoint");
  heat->add_option("--id", heat_id, "image id (default: first)");
  heat->add_option("--query", query, "query token index");

  auto* pca = app.add_subcommand("pca", "principal components of one image's tokens");
  std::string pca_features, pca_ckpt, pca_id;
  std::size_t components = 3;
  pca->add_option("--features", pca_features, "feature dump directory or one .tvec file");
  pca->add_option("--checkpoint", pca_ckpt, "student checkpoint");
  pca->add_option("--id", pca_id, "image id (default: first)");
  pca->add_option("--components", components, "number of components")->check(CLI::PositiveNumber);

  auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full loss gradient");
  double gc_lambda = 0.5;
  gc->add_option("--lambda", gc_lambda, "global loss weight");

  auto* ablate = app.add_subcommand("ablate-lambda", "train once per global loss weight");
  std::vector<double> lambdas{0.0, 0.5, 1.0};
  ablate->add_option("--lambdas", lambdas, "comma-separated weights")->delimiter(',');

  auto* mask_cmd = app.add_subcommand("mask", "export one block mask as a PGM");
  std::uint64_t step = 0;
  mask_cmd->add_option("--step", step, "training step whose slot-0 mask to export");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  RunConfig cfg = resolve(g);
  if (dump->parsed() && !teacher_kind.empty()) {
    cfg.train.teacher.kind = teacher_kind == "file" ? TeacherKind::kFile : TeacherKind::kProcedural;
    cfg.validate();
  }
  TrainOptions options;
  options.threads = g.threads;

  if (pretrain->parsed()) {
    const fs::path out = out_dir(g);
    const std::vector<Image> images = load_run_images(cfg);
    options.on_step = [](const StepMetrics& m) {
      std::fprintf(stderr, "step %zu epoch %zu lr %.3e L_patch %.6f L_global %.6f L_total %.6f\n", m.step, m.epoch,
                   m.lr, m.loss.patch, m.loss.global, m.loss.total);
    };
    const TrainResult r = reduced ? train_baseline(cfg.train, images, out, options)
                                  : train(cfg.train, images, out, options);
    std::printf("trained %zu steps; final L_total %.9g\n", r.metrics.size(), r.metrics.back().loss.total);
  } else if (dump->parsed()) {
    const fs::path out = out_dir(g);
    const Teacher teacher(cfg.train.teacher, cfg.train.model.channels, cfg.train.model.patch_side);
    const std::vector<Image> images = load_run_images(cfg);
    dump_features(teacher, images, out / "features");
    std::printf("wrote %zu feature files to %s\n", images.size(), (out / "features").string().c_str());
  } else if (diversity->parsed()) {
    const fs::path out = out_dir(g);
    const DiversityReport report = corpus_diversity(features_for(cfg, div_features, g.threads), g.threads);
    write_json(out / "diversity.json", report.to_json());
    std::printf("diver %.17g over %zu samples\n", report.diver, report.n_samples);
  } else if (heat->parsed()) {
    const fs::path out = out_dir(g);
    const TokenGrid grid = pick_tokens(cfg, heat_features, heat_ckpt, heat_id, g.threads);
    const HeatMap map = heatmap(grid.tokens, grid.grid_side, query);
    const fs::path path = out / ("heatmap_" + grid.id + "_" + std::to_string(query) + ".pgm");
    render_pgm(map, path);
    std::printf("wrote %s\n", path.string().c_str());
  } else if (pca->parsed()) {
    const fs::path out = out_dir(g);
    const TokenGrid grid = pick_tokens(cfg, pca_features, pca_ckpt, pca_id, g.threads);
    const PcaResult r = pca_reduce(grid.tokens, components);
    save_tensor(out / ("pca_" + grid.id + ".tvec"), r.projected.cast<float>());
    write_json(out / ("pca_" + grid.id + ".json"),
               {{"id", grid.id}, {"grid_side", grid.grid_side}, {"explained_variance", r.explained_variance}});
    std::printf("wrote %s\n", (out / ("pca_" + grid.id + ".tvec")).string().c_str());
  } else if (gc->parsed()) {
    GradCheckConfig gcc;
    gcc.loss.lambda = gc_lambda;
    gcc.seed = cfg.train.seed;
    const GradCheckReport report = grad_check(gcc);
    if (!g.out.empty()) write_json(out_dir(g) / "grad_check.json", report.to_json());
    std::printf("max_rel_err %.6e worst %s[%zu] over %zu scalars in %.2f s\n", report.max_rel_err,
                report.worst_param.c_str(), report.worst_index, report.scalars_checked, report.seconds);
  } else if (ablate->parsed()) {
    validate_lambdas(lambdas);
    const fs::path out = out_dir(g);
    const std::vector<AblationRow> rows = ablate_lambda(cfg.train, load_run_images(cfg), lambdas, out, options);
    write_text(out / "ablate_lambda.csv", ablation_csv(rows));
    std::printf("%s", ablation_csv(rows).c_str());
  } else if (mask_cmd->parsed()) {
    const fs::path out = out_dir(g);
    const PatchMask mask = generate_mask(cfg.train.mask_spec(mask_seed_for(cfg.train.mask_seed, step, 0)));
    HeatMap map{mask.grid_side(), 0, {}};
    for (std::size_t i = 0; i < mask.grid_side() * mask.grid_side(); ++i) map.values.push_back(mask.is_masked(i) ? 1.0 : 0.0);
    render_pgm(map, out / ("mask_" + std::to_string(step) + ".pgm"));
    std::printf("%zu of %zu patches masked\n", mask.masked().size(), mask.grid_side() * mask.grid_side());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kExitNumeric;
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
