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

// Naive double-loop restatement of the token-similarity metric.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "mimkit/tensor.hpp"

namespace oracle {

inline double naive_similarity(const mimkit::Tensor<double>& y) {
  const std::size_t k = y.dim(0), d = y.dim(1);
  std::vector<double> off;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      double dot = 0, ni = 0, nj = 0;
      for (std::size_t c = 0; c < d; ++c) {
        dot += y.at(i, c) * y.at(j, c);
        ni += y.at(i, c) * y.at(i, c);
        nj += y.at(j, c) * y.at(j, c);
      }
      off.push_back(dot / (std::sqrt(ni) * std::sqrt(nj)));
    }
  const double lo = *std::min_element(off.begin(), off.end()), hi = *std::max_element(off.begin(), off.end());
  if (hi - lo <= 1e-12) return std::clamp(std::accumulate(off.begin(), off.end(), 0.0) / off.size(), 0.0, 1.0);
  double s = 0;
  for (double v : off) s += (v - lo) / (hi - lo);
  return s / static_cast<double>(off.size());
}

}  // namespace oracle
