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

#include "mimkit/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>

#include "mimkit/rng.hpp"

namespace mimkit {

namespace {

// Next header token, skipping whitespace and '#' comments.
std::string header_token(std::istream& in, const std::string& where) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c) && c != '#') {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  if (tok.empty()) throw DataError(where + ": malformed header");
  // c is the single whitespace byte that ends the token (consumed).
  return tok;
}

std::size_t header_number(std::istream& in, const std::string& where) {
  const std::string tok = header_token(in, where);
  if (!std::all_of(tok.begin(), tok.end(), [](char ch) { return std::isdigit(static_cast<unsigned char>(ch)); }) ||
      tok.size() > 9) {
    throw DataError(where + ": malformed header field '" + tok + "'");
  }
  return std::stoul(tok);
}

}  // namespace

Tensor<float> read_pnm(const std::filesystem::path& path) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + where);
  const std::string magic = header_token(in, where);
  std::size_t channels = 0;
  if (magic == "P5") {
    channels = 1;
  } else if (magic == "P6") {
    channels = 3;
  } else {
    throw DataError(where + ": not a binary PGM/PPM (magic '" + magic + "')");
  }
  const std::size_t width = header_number(in, where);
  const std::size_t height = header_number(in, where);
  const std::size_t maxval = header_number(in, where);
  if (width == 0 || height == 0 || maxval == 0 || maxval > 65535) throw DataError(where + ": invalid dimensions or maxval");
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(width * height * channels * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError(where + ": truncated payload");

  Tensor<float> out({channels, height, width});
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c) {
        const std::size_t i = (y * width + x) * channels + c;
        const unsigned v = bytes_per == 1 ? raw[i] : (unsigned(raw[2 * i]) << 8) | raw[2 * i + 1];
        if (v > maxval) throw DataError(where + ": sample exceeds maxval");
        out[(c * height + y) * width + x] = static_cast<float>(v) / static_cast<float>(maxval);
      }
  return out;
}

void write_pnm(const std::filesystem::path& path, const Tensor<float>& image) {
  if (image.rank() != 3 || (image.dim(0) != 1 && image.dim(0) != 3)) {
    throw DimensionError("write_pnm needs a [1|3 x H x W] image, got " + shape_str(image.shape()));
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out << (c == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raw(c * h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const float v = std::clamp(image[(ch * h + y) * w + x], 0.0f, 1.0f);
        raw[(y * w + x) * c + ch] = static_cast<unsigned char>(std::lround(v * 255.0f));
      }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!out) throw DataError("write failed: " + path.string());
}

Tensor<float> normalize_image(const Tensor<float>& image, float mean, float std) {
  if (!(std > 0.0f)) throw ConfigError("image.std must be positive");
  Tensor<float> out = image.detach();
  for (auto& v : out.mutable_data()) v = (v - mean) / std;
  return out;
}

std::vector<Image> load_images(const std::filesystem::path& dir, float mean, float std) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (entry.is_regular_file() && (ext == ".pgm" || ext == ".ppm")) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Image> images;
  for (const auto& f : files) {
    Image img{f.stem().string(), normalize_image(read_pnm(f), mean, std)};
    if (!images.empty() && img.pixels.shape() != images.front().pixels.shape()) {
      throw DataError(f.string() + ": shape " + shape_str(img.pixels.shape()) + " differs from " +
                      shape_str(images.front().pixels.shape()));
    }
    images.push_back(std::move(img));
  }
  return images;
}

std::vector<Image> synthetic_images(std::size_t count, std::size_t side, std::size_t channels, std::uint64_t seed) {
  std::vector<Image> images;
  for (std::size_t n = 0; n < count; ++n) {
    Rng rng(derive_seed(seed, 0x696d67, n));
    Tensor<float> px({channels, side, side});
    for (std::size_t c = 0; c < channels; ++c) {
      // Two plane waves and one Gaussian blob per channel.
      double fx[2], fy[2], ph[2];
      for (int k = 0; k < 2; ++k) {
        fx[k] = rng.uniform(0.5, 3.0);
        fy[k] = rng.uniform(0.5, 3.0);
        ph[k] = rng.uniform(0.0, 2 * std::numbers::pi);
      }
      const double bx = rng.uniform(0, side), by = rng.uniform(0, side), br = rng.uniform(0.1, 0.3) * side;
      for (std::size_t y = 0; y < side; ++y)
        for (std::size_t x = 0; x < side; ++x) {
          const double u = static_cast<double>(x) / side, v = static_cast<double>(y) / side;
          double s = 0.0;
          for (int k = 0; k < 2; ++k) s += 0.25 * std::sin(2 * std::numbers::pi * (fx[k] * u + fy[k] * v) + ph[k]);
          const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
          s += 0.5 * std::exp(-d2 / (2 * br * br)) - 0.25;
          px[(c * side + y) * side + x] = static_cast<float>(std::clamp(0.5 + s, 0.0, 1.0));
        }
    }
    char id[32];
    std::snprintf(id, sizeof id, "synth_%04zu", n);
    images.push_back({id, std::move(px)});
  }
  return images;
}

}  // namespace mimkit
