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

#include "mimkit/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace mimkit {

namespace {

constexpr std::array<char, 4> kMagic{'T', 'V', 'E', 'C'};

template <typename U>
void put_le(std::ostream& out, U value) {
  std::array<char, sizeof(U)> bytes;
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  out.write(bytes.data(), bytes.size());
}

template <typename U>
U get_le(std::istream& in) {
  std::array<unsigned char, sizeof(U)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw DataError("tensor file truncated");
  U value = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes[i]) << (8 * i);
  return value;
}

}  // namespace

void write_tensor(std::ostream& out, const Tensor<float>& t) {
  if (t.rank() > 255) throw DimensionError("tensor rank exceeds 255");
  out.write(kMagic.data(), kMagic.size());
  put_le<std::uint8_t>(out, kTensorFileVersion);
  put_le<std::uint8_t>(out, kDtypeF32);
  put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
  for (std::size_t e : t.shape()) put_le<std::uint64_t>(out, e);
  for (float v : t.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw DataError("tensor write failed");
}

Tensor<float> read_tensor(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw DataError("not a tensor file (bad magic)");
  const auto version = get_le<std::uint8_t>(in);
  if (version != kTensorFileVersion) throw DataError("unsupported tensor file version " + std::to_string(version));
  const auto dtype = get_le<std::uint8_t>(in);
  if (dtype != kDtypeF32) throw DataError("unsupported tensor dtype " + std::to_string(dtype));
  const auto rank = get_le<std::uint8_t>(in);
  Shape shape(rank);
  std::size_t n = 1;
  for (auto& e : shape) {
    e = static_cast<std::size_t>(get_le<std::uint64_t>(in));
    if (e != 0 && n > (std::size_t{1} << 40) / e) throw DataError("tensor extents too large");
    n *= e;
  }
  std::vector<float> data(n);
  for (auto& v : data) v = std::bit_cast<float>(get_le<std::uint32_t>(in));
  return Tensor<float>(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  write_tensor(out, t);
}

Tensor<float> load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open: " + path.string());
  Tensor<float> t = read_tensor(in);
  if (in.peek() != std::char_traits<char>::eof()) throw DataError("trailing bytes in tensor file: " + path.string());
  return t;
}

}  // namespace mimkit
