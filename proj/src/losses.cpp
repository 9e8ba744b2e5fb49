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

#include "mimkit/losses.hpp"

#include <cmath>

#include "mimkit/json_fields.hpp"

namespace mimkit {

void LossConfig::validate() const {
  if (!(beta > 0.0) || !std::isfinite(beta)) throw ConfigError("loss.beta must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("loss.lambda must be non-negative");
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = nlohmann::json{{"beta", c.beta},
                     {"lambda", c.lambda},
                     {"channel_reduction", c.reduction == ChannelReduction::kMean ? "mean" : "sum"}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  using namespace json_fields;
  check_keys(j, "loss", {"beta", "lambda", "channel_reduction"});
  c.beta = get(j, "loss", "beta", c.beta);
  c.lambda = get(j, "loss", "lambda", c.lambda);
  const auto red = get<std::string>(j, "loss", "channel_reduction", c.reduction == ChannelReduction::kMean ? "mean" : "sum");
  if (red == "mean") {
    c.reduction = ChannelReduction::kMean;
  } else if (red == "sum") {
    c.reduction = ChannelReduction::kSum;
  } else {
    throw ConfigError("loss.channel_reduction: expected \"mean\" or \"sum\"");
  }
}

double smooth_l1(double x, double beta) {
  if (!(beta > 0.0)) throw ConfigError("smooth_l1: beta must be positive");
  const double a = std::abs(x);
  return a < beta ? 0.5 * x * x / beta : a - 0.5 * beta;
}

template <typename T>
Tensor<T> patch_loss(const Tensor<T>& z, const Tensor<T>& y, const PatchMask& mask, const LossConfig& cfg) {
  if (z.shape() != y.shape() || z.rank() != 2) {
    throw DimensionError("patch_loss: predictions " + shape_str(z.shape()) + " vs targets " + shape_str(y.shape()));
  }
  if (z.dim(0) != mask.num_patches()) throw DimensionError("patch_loss: mask does not cover the prediction grid");
  if (mask.masked().empty()) throw DegenerateMaskError("patch_loss: no masked patches");
  const std::span<const std::size_t> m(mask.masked());
  const Tensor<T> per = smooth_l1(sub(gather_rows(y, m), gather_rows(z, m)), static_cast<T>(cfg.beta));
  const double denom = static_cast<double>(m.size()) *
                       (cfg.reduction == ChannelReduction::kMean ? static_cast<double>(z.dim(1)) : 1.0);
  return scale(sum(per), static_cast<T>(1.0 / denom));
}

template <typename T>
Tensor<T> global_loss(const Tensor<T>& projected, const Tensor<T>& y, const PatchMask& mask, const LossConfig& cfg) {
  if (mask.visible().empty()) throw DegenerateMaskError("global_loss: no visible patches");
  if (projected.rank() != 2 || projected.dim(0) != mask.visible().size()) {
    throw DimensionError("global_loss: expected one projected token per visible patch, got " +
                         shape_str(projected.shape()));
  }
  if (y.rank() != 2 || y.dim(1) != projected.dim(1)) {
    throw DimensionError("global_loss: targets " + shape_str(y.shape()) + " vs projections " +
                         shape_str(projected.shape()));
  }
  const Tensor<T> per = smooth_l1(sub(mean_rows(projected), mean_rows(y)), static_cast<T>(cfg.beta));
  const double denom = cfg.reduction == ChannelReduction::kMean ? static_cast<double>(y.dim(1)) : 1.0;
  return scale(sum(per), static_cast<T>(1.0 / denom));
}

template <typename T>
Tensor<T> total_loss(const Tensor<T>& patch, const Tensor<T>& global, T lambda) {
  if (patch.numel() != 1 || global.numel() != 1) throw DimensionError("total_loss: inputs must be scalars");
  return add(reshape(patch, {}), scale(reshape(global, {}), lambda));
}

#define MIMKIT_INSTANTIATE(T)                                                                                  \
  template Tensor<T> patch_loss(const Tensor<T>&, const Tensor<T>&, const PatchMask&, const LossConfig&);      \
  template Tensor<T> global_loss(const Tensor<T>&, const Tensor<T>&, const PatchMask&, const LossConfig&);     \
  template Tensor<T> total_loss(const Tensor<T>&, const Tensor<T>&, T);

MIMKIT_INSTANTIATE(float)
MIMKIT_INSTANTIATE(double)

#undef MIMKIT_INSTANTIATE

}  // namespace mimkit
