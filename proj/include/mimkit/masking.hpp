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

// Block-wise random patch masking. The image is tiled into square blocks of
// whole patches; round-half-up(ratio * blocks) blocks are masked, chosen
// uniformly without replacement from Rng(seed).

#include <cstddef>
#include <cstdint>
#include <vector>

#include "mimkit/tensor.hpp"

namespace mimkit {

struct MaskSpec {
  std::size_t image_side = 224;
  std::size_t patch_side = 16;
  std::size_t block_side = 32;
  double mask_ratio = 0.6;
  std::uint64_t seed = 0;

  // Throws ConfigError on divisibility or range violations.
  void validate() const;

  std::size_t grid_side() const { return image_side / patch_side; }
  std::size_t num_patches() const { return grid_side() * grid_side(); }
  std::size_t blocks_per_side() const { return image_side / block_side; }
  std::size_t num_blocks() const { return blocks_per_side() * blocks_per_side(); }
  std::size_t patches_per_block() const {
    const std::size_t r = block_side / patch_side;
    return r * r;
  }
  std::size_t masked_block_count() const;
};

class PatchMask {
 public:
  PatchMask() = default;
  // grid[i] == true marks patch i (row-major) as masked.
  PatchMask(std::size_t grid_side, std::vector<bool> grid);

  static PatchMask all_visible(std::size_t grid_side) {
    return PatchMask(grid_side, std::vector<bool>(grid_side * grid_side, false));
  }

  std::size_t grid_side() const { return grid_side_; }
  std::size_t num_patches() const { return grid_.size(); }
  bool is_masked(std::size_t patch) const { return grid_.at(patch); }
  const std::vector<bool>& grid() const { return grid_; }
  const std::vector<std::size_t>& masked() const { return masked_; }
  const std::vector<std::size_t>& visible() const { return visible_; }

  // 0/1 floats over the patch grid, [grid_side x grid_side].
  Tensor<float> to_tensor() const;

  bool operator==(const PatchMask&) const = default;

 private:
  std::size_t grid_side_ = 0;
  std::vector<bool> grid_;
  std::vector<std::size_t> masked_;
  std::vector<std::size_t> visible_;
};

// Throws ConfigError for an invalid spec, DegenerateMaskError when rounding
// leaves no visible patch.
PatchMask generate_mask(const MaskSpec& spec);

double mask_ratio_actual(const PatchMask& mask);

// Seed of the mask drawn for batch slot `slot` at training step `step`.
std::uint64_t mask_seed_for(std::uint64_t base_seed, std::uint64_t step, std::uint64_t slot);

}  // namespace mimkit
