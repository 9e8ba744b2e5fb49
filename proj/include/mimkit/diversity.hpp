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

// Token diversity of a teacher.
//
// For one sample with K tokens, the K(K-1) off-diagonal cosine similarities
// are min-max normalized to [0, 1] within the sample and averaged to give
// sim_n. Over N samples, diver = 1 - mean(sim_n).
//
// When every off-diagonal cosine is equal (spread <= kDegenerateSpread) the
// normalization is undefined; sim_n is then the shared cosine clamped to
// [0, 1], so identical tokens give 1 and orthogonal tokens give 0.

#include <string>
#include <vector>

#include "json.hpp"
#include "mimkit/teacher.hpp"
#include "mimkit/tensor.hpp"

namespace mimkit {

inline constexpr double kDegenerateSpread = 1e-12;

struct DiversityReport {
  std::vector<double> per_sample;  // sim_n
  double diver = 0.0;
  std::size_t n_samples = 0;
  std::size_t tokens_per_sample = 0;  // 0 when samples differ in K

  nlohmann::json to_json() const;  // {n, k, diver, per_sample}
};

// [K x D] -> [K x K]. Throws NumericError on a zero-norm token.
Tensor<double> pairwise_cosine(const Tensor<double>& tokens);

double sample_similarity(const Tensor<double>& tokens);

// Samples are processed on up to `threads` threads; the final reduction runs
// in sample order, so the result does not depend on the thread count.
DiversityReport corpus_diversity(const std::vector<Tensor<double>>& samples, std::size_t threads = 1);
DiversityReport corpus_diversity(const std::vector<TeacherFeatures>& samples, std::size_t threads = 1);

}  // namespace mimkit
