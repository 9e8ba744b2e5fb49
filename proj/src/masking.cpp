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

#include "mimkit/masking.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "mimkit/rng.hpp"

namespace mimkit {

void MaskSpec::validate() const {
  if (patch_side == 0 || block_side == 0 || image_side == 0) throw ConfigError("mask: sides must be positive");
  if (block_side % patch_side != 0) {
    throw ConfigError("mask: block_side " + std::to_string(block_side) + " is not a multiple of patch_side " +
                      std::to_string(patch_side));
  }
  if (image_side % block_side != 0) {
    throw ConfigError("mask: image_side " + std::to_string(image_side) + " is not a multiple of block_side " +
                      std::to_string(block_side));
  }
  if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask: mask_ratio must lie in (0, 1)");
}

std::size_t MaskSpec::masked_block_count() const {
  return static_cast<std::size_t>(std::floor(mask_ratio * static_cast<double>(num_blocks()) + 0.5));
}

PatchMask::PatchMask(std::size_t grid_side, std::vector<bool> grid) : grid_side_(grid_side), grid_(std::move(grid)) {
  if (grid_.size() != grid_side_ * grid_side_) throw DimensionError("mask grid size does not match grid side");
  for (std::size_t i = 0; i < grid_.size(); ++i) (grid_[i] ? masked_ : visible_).push_back(i);
}

Tensor<float> PatchMask::to_tensor() const {
  std::vector<float> v(grid_.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = grid_[i] ? 1.0f : 0.0f;
  return Tensor<float>({grid_side_, grid_side_}, std::move(v));
}

PatchMask generate_mask(const MaskSpec& spec) {
  spec.validate();
  const std::size_t total = spec.num_blocks();
  const std::size_t k = spec.masked_block_count();
  if (k >= total) {
    throw DegenerateMaskError("mask: ratio " + std::to_string(spec.mask_ratio) + " masks all " + std::to_string(total) +
                              " blocks; the encoder needs at least one visible patch");
  }

  // Partial Fisher-Yates: the first k entries are the masked blocks.
  std::vector<std::size_t> blocks(total);
  std::iota(blocks.begin(), blocks.end(), std::size_t{0});
  Rng rng(spec.seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.below(total - i));
    std::swap(blocks[i], blocks[j]);
  }

  const std::size_t g = spec.grid_side();
  const std::size_t bps = spec.blocks_per_side();
  const std::size_t r = spec.block_side / spec.patch_side;
  std::vector<bool> grid(g * g, false);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t br = blocks[i] / bps, bc = blocks[i] % bps;
    for (std::size_t y = 0; y < r; ++y)
      for (std::size_t x = 0; x < r; ++x) grid[(br * r + y) * g + bc * r + x] = true;
  }
  return PatchMask(g, std::move(grid));
}

double mask_ratio_actual(const PatchMask& mask) {
  if (mask.num_patches() == 0) return 0.0;
  return static_cast<double>(mask.masked().size()) / static_cast<double>(mask.num_patches());
}

std::uint64_t mask_seed_for(std::uint64_t base_seed, std::uint64_t step, std::uint64_t slot) {
  return derive_seed(base_seed, step, slot);
}

}  // namespace mimkit
