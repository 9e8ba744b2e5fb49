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

// Query-patch similarity heat-maps and PCA by power iteration.

#include <filesystem>
#include <vector>

#include "mimkit/tensor.hpp"

namespace mimkit {

struct HeatMap {
  std::size_t grid_side = 0;
  std::size_t query_index = 0;
  std::vector<double> values;  // cosine to the query, row-major over the grid
};

// tokens: [grid_side^2 x D]. Throws NumericError on zero-norm tokens.
HeatMap heatmap(const Tensor<double>& tokens, std::size_t grid_side, std::size_t query);

// 8-bit PGM; [min, max] of the map is stretched to [0, 255] (a flat map is
// uniform 128). Writes a sidecar <path>.json with the query cell and range.
void render_pgm(const HeatMap& map, const std::filesystem::path& path);

struct PcaResult {
  Tensor<double> projected;                // [M x n]
  Tensor<double> components;               // [n x D], orthonormal rows
  std::vector<double> explained_variance;  // non-increasing
  Tensor<double> mean;                     // [D]
};

struct PcaOptions {
  std::size_t max_iterations = 1000;
  double tolerance = 1e-10;  // relative eigenvalue change
};

// Top n_components directions of the sample covariance (divisor M - 1),
// found one at a time by power iteration with rank-one deflation.
PcaResult pca_reduce(const Tensor<double>& x, std::size_t n_components, const PcaOptions& options = {});

}  // namespace mimkit
