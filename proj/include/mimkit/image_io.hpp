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

// Binary PGM (P5) / PPM (P6) reading and writing, plus seeded synthetic
// images for tests and demos.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mimkit/tensor.hpp"

namespace mimkit {

struct Image {
  std::string id;        // file stem
  Tensor<float> pixels;  // [C x H x W]
};

// Pixel values scaled to [0, 1]. Supports maxval up to 65535.
Tensor<float> read_pnm(const std::filesystem::path& path);

// Values clamped to [0, 1] and quantized to 8 bits. C must be 1 (P5) or 3 (P6).
void write_pnm(const std::filesystem::path& path, const Tensor<float>& image);

// (x - mean) / std on every channel.
Tensor<float> normalize_image(const Tensor<float>& image, float mean, float std);

// All *.pgm / *.ppm files in `dir`, sorted by file name, normalized. Every
// image must share one shape.
std::vector<Image> load_images(const std::filesystem::path& dir, float mean = 0.5f, float std = 0.5f);

// Smooth random patterns in [0, 1], deterministic in seed.
std::vector<Image> synthetic_images(std::size_t count, std::size_t side, std::size_t channels, std::uint64_t seed);

}  // namespace mimkit
