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

// Binary tensor files:
//   "TVEC" | u8 version (1) | u8 dtype (0 = f32) | u8 rank |
//   rank x u64 extents (LE) | row-major f32 payload (LE)

#include <filesystem>
#include <iosfwd>

#include "mimkit/tensor.hpp"

namespace mimkit {

inline constexpr std::uint8_t kTensorFileVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

void write_tensor(std::ostream& out, const Tensor<float>& t);
Tensor<float> read_tensor(std::istream& in);

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> load_tensor(const std::filesystem::path& path);

}  // namespace mimkit
