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

#include "mimkit/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "mimkit/diversity.hpp"
#include "mimkit/rng.hpp"

namespace mimkit {

HeatMap heatmap(const Tensor<double>& tokens, std::size_t grid_side, std::size_t query) {
  if (tokens.rank() != 2 || tokens.dim(0) != grid_side * grid_side) {
    throw DimensionError("heatmap: tokens " + shape_str(tokens.shape()) + " do not form a " +
                         std::to_string(grid_side) + "x" + std::to_string(grid_side) + " grid");
  }
  const std::size_t k = tokens.dim(0), d = tokens.dim(1);
  if (query >= k) throw ConfigError("heatmap: query " + std::to_string(query) + " out of range");
  auto norm = [&](std::size_t i) {
    double s = 0;
    for (std::size_t c = 0; c < d; ++c) s += tokens[i * d + c] * tokens[i * d + c];
    const double n = std::sqrt(s);
    if (!(n > 0.0)) throw NumericError("heatmap: token " + std::to_string(i) + " has zero norm");
    return n;
  };
  HeatMap map{grid_side, query, std::vector<double>(k)};
  const double nq = norm(query);
  for (std::size_t j = 0; j < k; ++j) {
    double dot = 0;
    bool same = true;
    for (std::size_t c = 0; c < d; ++c) {
      dot += tokens[query * d + c] * tokens[j * d + c];
      same = same && tokens[query * d + c] == tokens[j * d + c];
    }
    map.values[j] = same ? 1.0 : std::clamp(dot / (nq * norm(j)), -1.0, 1.0);
  }
  return map;
}

void render_pgm(const HeatMap& map, const std::filesystem::path& path) {
  const std::size_t g = map.grid_side;
  if (map.values.size() != g * g || g == 0) throw DimensionError("render_pgm: malformed heat-map");
  const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<unsigned char> pixels(g * g);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = hi > lo ? static_cast<unsigned char>(std::lround((map.values[i] - lo) / (hi - lo) * 255.0)) : 128;
  }
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "P5\n" << g << ' ' << g << "\n255\n";
    out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
    if (!out) throw DataError("write failed: " + path.string());
  }
  std::filesystem::path sidecar = path;
  sidecar += ".json";
  std::ofstream meta(sidecar, std::ios::trunc);
  if (!meta) throw DataError("cannot open for writing: " + sidecar.string());
  meta << nlohmann::json{{"grid_side", g},
                         {"query_index", map.query_index},
                         {"query_row", map.query_index / g},
                         {"query_col", map.query_index % g},
                         {"min", lo},
                         {"max", hi}}
              .dump(2)
       << '\n';
}

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

// Removes the span of `basis` from v (two passes for stability) and returns
// the remaining norm.
double orthogonalize(std::vector<double>& v, const std::vector<std::vector<double>>& basis) {
  for (int pass = 0; pass < 2; ++pass)
    for (const auto& b : basis) {
      const double p = dot(v, b);
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= p * b[i];
    }
  return std::sqrt(dot(v, v));
}

}  // namespace

PcaResult pca_reduce(const Tensor<double>& x, std::size_t n_components, const PcaOptions& options) {
  if (x.rank() != 2) throw DimensionError("pca_reduce needs [M x D], got " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), d = x.dim(1);
  if (n_components == 0 || n_components > std::min(m, d)) {
    throw ConfigError("pca: n_components must lie in [1, " + std::to_string(std::min(m, d)) + "]");
  }

  PcaResult r;
  r.mean = Tensor<double>({d});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < d; ++c) r.mean[c] += x[i * d + c];
  for (std::size_t c = 0; c < d; ++c) r.mean[c] /= static_cast<double>(m);

  std::vector<double> cov(d * d, 0.0);
  std::vector<double> row(d);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t c = 0; c < d; ++c) row[c] = x[i * d + c] - r.mean[c];
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = a; b < d; ++b) cov[a * d + b] += row[a] * row[b];
  }
  const double denom = m > 1 ? static_cast<double>(m - 1) : 1.0;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      cov[a * d + b] /= denom;
      cov[b * d + a] = cov[a * d + b];
    }
  double scale = 0;
  for (std::size_t a = 0; a < d; ++a) scale = std::max(scale, std::abs(cov[a * d + a]));

  auto apply = [&](const std::vector<double>& v) {
    std::vector<double> out(d, 0.0);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) out[a] += cov[a * d + b] * v[b];
    return out;
  };

  std::vector<std::vector<double>> comps;
  std::vector<double> eigen;
  Rng rng(0x706361);
  for (std::size_t k = 0; k < n_components; ++k) {
    std::vector<double> v(d);
    for (auto& e : v) e = rng.normal();
    double n = orthogonalize(v, comps);
    for (auto& e : v) e /= n;
    double lambda = 0;
    for (std::size_t it = 0; it < options.max_iterations; ++it) {
      std::vector<double> w = apply(v);
      const double next = dot(v, w);
      n = orthogonalize(w, comps);
      if (n <= 1e-14 * std::max(scale, 1e-300)) {
        // Remaining spectrum is numerically zero; any orthonormal completion works.
        lambda = std::max(next, 0.0);
        break;
      }
      for (std::size_t i = 0; i < d; ++i) v[i] = w[i] / n;
      const bool converged = it > 0 && std::abs(next - lambda) <= options.tolerance * std::abs(next);
      lambda = next;
      if (converged) break;
    }
    lambda = std::max(dot(v, apply(v)), 0.0);
    // Rank-one deflation.
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) cov[a * d + b] -= lambda * v[a] * v[b];
    comps.push_back(std::move(v));
    eigen.push_back(lambda);
  }

  std::vector<std::size_t> order(n_components);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return eigen[a] > eigen[b]; });

  r.components = Tensor<double>({n_components, d});
  for (std::size_t k = 0; k < n_components; ++k) {
    r.explained_variance.push_back(eigen[order[k]]);
    std::copy(comps[order[k]].begin(), comps[order[k]].end(), r.components.mutable_data().begin() + k * d);
  }
  r.projected = Tensor<double>({m, n_components});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t k = 0; k < n_components; ++k) {
      double s = 0;
      for (std::size_t c = 0; c < d; ++c) s += (x[i * d + c] - r.mean[c]) * r.components[k * d + c];
      r.projected[i * n_components + k] = s;
    }
  return r;
}

}  // namespace mimkit
