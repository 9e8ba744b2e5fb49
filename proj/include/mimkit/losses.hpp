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

// Reconstruction objectives on masked slots and on the pooled visible tokens.
//
// smooth_l1(x) = 0.5 x^2 / beta   if |x| < beta
//              = |x| - 0.5 beta   otherwise

#include "json.hpp"
#include "mimkit/masking.hpp"
#include "mimkit/tensor.hpp"

namespace mimkit {

enum class ChannelReduction { kMean, kSum };

struct LossConfig {
  double beta = 2.0;
  double lambda = 0.5;
  ChannelReduction reduction = ChannelReduction::kMean;

  void validate() const;
  bool operator==(const LossConfig&) const = default;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

double smooth_l1(double x, double beta);

// Mean over masked patches of the channel-reduced smooth L1 of (y - z).
// z, y: [N x D]. Throws DegenerateMaskError if nothing is masked.
template <typename T>
Tensor<T> patch_loss(const Tensor<T>& z, const Tensor<T>& y, const PatchMask& mask, const LossConfig& cfg);

// Smooth L1 between the mean projected visible token and the mean teacher
// token, channel-reduced. projected: [|V| x D], y: [K x D].
template <typename T>
Tensor<T> global_loss(const Tensor<T>& projected, const Tensor<T>& y, const PatchMask& mask, const LossConfig& cfg);

// patch + lambda * global
template <typename T>
Tensor<T> total_loss(const Tensor<T>& patch, const Tensor<T>& global, T lambda);

}  // namespace mimkit
