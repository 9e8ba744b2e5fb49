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

#include "mimkit/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <thread>

namespace mimkit {

nlohmann::json DiversityReport::to_json() const {
  return {{"n", n_samples}, {"k", tokens_per_sample}, {"diver", diver}, {"per_sample", per_sample}};
}

Tensor<double> pairwise_cosine(const Tensor<double>& tokens) {
  if (tokens.rank() != 2) throw DimensionError("pairwise_cosine needs [K x D], got " + shape_str(tokens.shape()));
  const std::size_t k = tokens.dim(0), d = tokens.dim(1);
  if (k < 2) throw DimensionError("pairwise_cosine needs at least two tokens");
  std::vector<double> norms(k);
  for (std::size_t i = 0; i < k; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += tokens[i * d + c] * tokens[i * d + c];
    norms[i] = std::sqrt(s);
    if (!(norms[i] > 0.0) || !std::isfinite(norms[i])) {
      throw NumericError("token " + std::to_string(i) + " has zero or non-finite norm; cosine is undefined");
    }
  }
  Tensor<double> out({k, k});
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i; j < k; ++j) {
      double dot = 0;
      bool same = true;
      for (std::size_t c = 0; c < d; ++c) {
        dot += tokens[i * d + c] * tokens[j * d + c];
        same = same && tokens[i * d + c] == tokens[j * d + c];
      }
      // Identical tokens get exactly 1; rounding in the norms would otherwise leave 1 - ulp.
      const double cos = same ? 1.0 : std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      out[i * k + j] = cos;
      out[j * k + i] = cos;
    }
  }
  return out;
}

double sample_similarity(const Tensor<double>& tokens) {
  const Tensor<double> cos = pairwise_cosine(tokens);
  const std::size_t k = cos.dim(0);
  double lo = cos[1], hi = cos[1];
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      lo = std::min(lo, cos[i * k + j]);
      hi = std::max(hi, cos[i * k + j]);
    }
  const double pairs = static_cast<double>(k * (k - 1));
  if (hi - lo <= kDegenerateSpread) {
    double total = 0;
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        if (i != j) total += cos[i * k + j];
    return std::clamp(total / pairs, 0.0, 1.0);
  }
  double total = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (i != j) total += (cos[i * k + j] - lo) / (hi - lo);
  return std::clamp(total / pairs, 0.0, 1.0);
}

DiversityReport corpus_diversity(const std::vector<Tensor<double>>& samples, std::size_t threads) {
  if (samples.empty()) throw ConfigError("corpus_diversity: empty corpus");
  DiversityReport r;
  r.n_samples = samples.size();
  r.per_sample.resize(samples.size());
  r.tokens_per_sample = samples.front().rank() == 2 ? samples.front().dim(0) : 0;
  for (const auto& s : samples) {
    if (s.rank() != 2 || s.dim(0) != r.tokens_per_sample) r.tokens_per_sample = 0;
  }

  const std::size_t workers = std::clamp<std::size_t>(threads, 1, samples.size());
  if (workers == 1) {
    for (std::size_t n = 0; n < samples.size(); ++n) r.per_sample[n] = sample_similarity(samples[n]);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        try {
          for (std::size_t n = w; n < samples.size(); n += workers) r.per_sample[n] = sample_similarity(samples[n]);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  double total = 0;
  for (double s : r.per_sample) total += s;
  r.diver = 1.0 - total / static_cast<double>(samples.size());
  return r;
}

DiversityReport corpus_diversity(const std::vector<TeacherFeatures>& samples, std::size_t threads) {
  std::vector<Tensor<double>> converted;
  converted.reserve(samples.size());
  for (const auto& s : samples) converted.push_back(s.tokens.cast<double>());
  return corpus_diversity(converted, threads);
}

}  // namespace mimkit
