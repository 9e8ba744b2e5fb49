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

#include <cmath>
#include <sstream>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "mimkit/tensor.hpp"
#include "mimkit/tensor_io.hpp"

using namespace mimkit;
using TD = Tensor<double>;

namespace {

// Gradient of sum(op(x) * w) for a fixed random weighting w, so every output
// element contributes with a distinct coefficient.
double check_op(const std::function<TD(const TD&)>& op, const TD& x0, Rng& rng) {
  const TD probe = op(x0);
  const TD w = fd::random_tensor(rng, probe.shape());
  auto f = [&](const TD& x) { return sum(mul(op(x), w)).item(); };
  Tape<double> tape;
  const TD x = tape.parameter("x", x0);
  const auto grads = tape.backward(sum(mul(op(x), w)));
  const auto numeric = fd::numeric_grad(f, x0);
  return fd::max_rel_err(grads.at("x").data(), numeric);
}

}  // namespace

TEST_CASE("matmul values") {
  const auto eye = Tensor<float>::matrix({{1, 0}, {0, 1}});
  const auto m = Tensor<float>::matrix({{1, 2}, {3, 4}});
  CHECK(matmul(eye, m).values() == m.values());
  const auto r = matmul(Tensor<float>::matrix({{1, 2}}), Tensor<float>::matrix({{3}, {4}}));
  CHECK(r.shape() == Shape{1, 1});
  CHECK(r.item() == 11.0f);
  CHECK_THROWS_AS(matmul(m, Tensor<float>::matrix({{1, 2, 3}})), DimensionError);
}

TEST_CASE("matmul gradient matches finite differences") {
  Rng rng(11);
  const TD a0 = fd::random_tensor(rng, {3, 3});
  const TD b = fd::random_tensor(rng, {3, 3});
  Tape<double> tape;
  const TD a = tape.parameter("a", a0);
  const auto grads = tape.backward(sum(matmul(a, b)));
  const auto numeric = fd::numeric_grad([&](const TD& x) { return sum(matmul(x, b)).item(); }, a0);
  CHECK(fd::max_rel_err(grads.at("a").data(), numeric) < 1e-4);
}

TEST_CASE("tensor shape invariant") {
  CHECK_THROWS_AS(Tensor<float>({2, 2}, {1, 2, 3}), DimensionError);
  CHECK(Tensor<float>::scalar(3).numel() == 1);
  CHECK_FALSE(Tensor<float>({2}).on_tape());
}

TEST_CASE("softmax") {
  const auto u = softmax(Tensor<double>::vector({0, 0, 0}), 0);
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  const auto s = softmax(Tensor<double>::vector({1000, 0, 0}), 0);
  CHECK(std::abs(s[0] - 1) < 1e-6);
  CHECK(std::abs(s[1]) < 1e-6);
  CHECK(std::abs(s[2]) < 1e-6);
  CHECK_THROWS_AS(softmax(Tensor<double>::vector({0, NAN}), 0), NumericError);
  CHECK_THROWS_AS(softmax(Tensor<double>::vector({0, 1}), 1), DimensionError);

  Rng rng(3);
  const TD x = fd::random_tensor(rng, {5, 7}, -4, 4);
  const TD y = softmax(x, 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double total = 0;
    for (std::size_t c = 0; c < 7; ++c) total += y.at(r, c);
    CHECK(std::abs(total - 1) < 1e-6);
  }
}

TEST_CASE("layer norm") {
  const auto ones = Tensor<double>::full({3}, 1), zeros = Tensor<double>::zeros({3});
  const auto c = layer_norm(Tensor<double>::matrix({{5, 5, 5}}), ones, zeros, kLayerNormEps);
  for (double v : c.data()) CHECK(v == 0.0);
  const auto y = layer_norm(Tensor<double>::matrix({{1, 2, 3}}), ones, zeros, kLayerNormEps);
  const double mu = (y[0] + y[1] + y[2]) / 3;
  const double var = ((y[0] - mu) * (y[0] - mu) + (y[1] - mu) * (y[1] - mu) + (y[2] - mu) * (y[2] - mu)) / 3;
  CHECK(std::abs(mu) < 1e-5);
  CHECK(std::abs(var - 1) < 1e-5);
}

TEST_CASE("every differentiable op matches finite differences over 100 random inputs") {
  Rng rng(2026);
  const TD b = fd::random_tensor(rng, {4, 3});
  const TD other = fd::random_tensor(rng, {3, 4});
  const TD gain = fd::random_tensor(rng, {4}, 0.5, 1.5);
  const TD bias = fd::random_tensor(rng, {4});
  const TD rowv = fd::random_tensor(rng, {4});
  const TD src = fd::random_tensor(rng, {2, 4});
  const std::vector<std::size_t> rows{2, 0};

  const std::vector<std::pair<const char*, std::function<TD(const TD&)>>> ops{
      {"matmul_lhs", [&](const TD& x) { return matmul(x, b); }},
      {"matmul_rhs", [&](const TD& x) { return matmul(other, x); }},
      {"transpose", [](const TD& x) { return transpose(x); }},
      {"add", [&](const TD& x) { return add(x, x); }},
      {"sub", [&](const TD& x) { return sub(other.shape() == x.shape() ? other : x, x); }},
      {"mul", [&](const TD& x) { return mul(x, x); }},
      {"scale", [](const TD& x) { return scale(x, 0.7); }},
      {"square", [](const TD& x) { return square(x); }},
      {"add_rowwise", [&](const TD& x) { return add_rowwise(x, rowv); }},
      {"mean", [](const TD& x) { return mean(x); }},
      {"mean_rows", [](const TD& x) { return mean_rows(x); }},
      {"softmax_rows", [](const TD& x) { return softmax(x, 1); }},
      {"softmax_cols", [](const TD& x) { return softmax(x, 0); }},
      {"layer_norm", [&](const TD& x) { return layer_norm(x, gain, bias, kLayerNormEps); }},
      {"gelu", [](const TD& x) { return gelu(x); }},
      {"relu", [](const TD& x) { return relu(x); }},
      {"smooth_l1", [](const TD& x) { return smooth_l1(scale(x, 3.0), 2.0); }},
      {"gather_rows", [&](const TD& x) { return gather_rows(x, std::span<const std::size_t>(rows)); }},
      {"scatter_rows_base", [&](const TD& x) { return scatter_rows(x, src, std::span<const std::size_t>(rows)); }},
      {"scatter_rows_src",
       [&](const TD& x) { return scatter_rows(b.dim(1) == 3 ? TD::zeros({5, 4}) : x, slice_rows(x, 0, 2), rows); }},
      {"repeat_rows", [](const TD& x) { return repeat_rows(slice_rows(x, 1, 1), 3); }},
      {"concat_rows", [](const TD& x) { return concat_rows(x, square(x)); }},
      {"slice_cols", [](const TD& x) { return slice_cols(x, 1, 2); }},
      {"concat_cols", [](const TD& x) { return concat_cols<double>({slice_cols(x, 2, 2), square(x)}); }},
      {"reshape", [](const TD& x) { return square(reshape(x, {x.numel()})); }},
  };

  for (const auto& [name, op] : ops) {
    double worst = 0;
    for (int trial = 0; trial < 100; ++trial) {
      const TD x = fd::random_tensor(rng, {4, 4}, -2, 2);
      worst = std::max(worst, check_op(op, x, rng));
    }
    INFO(name);
    CHECK(worst < 1e-4);
  }
}

TEST_CASE("backward contract") {
  Tape<double> tape;
  const TD w = tape.parameter("w", Tensor<double>::matrix({{1, 2}, {3, 4}}));
  const auto g = tape.backward(sum(w));
  CHECK(g.at("w").shape() == Shape{2, 2});
  for (double v : g.at("w").data()) CHECK(v == 1.0);

  Tape<double> t2;
  const TD v = t2.parameter("w", Tensor<double>::vector({1, 2}));
  const auto g2 = t2.backward(sum(square(v)));
  CHECK(g2.at("w").values() == std::vector<double>{2, 4});

  CHECK_THROWS_AS(t2.backward(square(v)), ContractError);
  CHECK_THROWS_AS(t2.parameter("w", v.detach()), ContractError);
  Tape<double> t3;
  CHECK_THROWS_AS(t3.backward(sum(v)), ContractError);
}

TEST_CASE("unreached parameters get zero gradients") {
  Tape<double> tape;
  const TD a = tape.parameter("a", Tensor<double>::vector({1, 2}));
  tape.parameter("unused", Tensor<double>::matrix({{1, 2, 3}}));
  const auto g = tape.backward(sum(a));
  CHECK(g.at("unused").shape() == Shape{1, 3});
  for (double v : g.at("unused").data()) CHECK(v == 0.0);
}

TEST_CASE("backward replays ops in reverse recording order") {
  Tape<double> tape;
  const TD x = tape.parameter("x", Tensor<double>::vector({0.3, -0.2, 0.5}));
  const TD loss = sum(gelu(square(scale(x, 2.0))));
  std::vector<std::size_t> visited;
  tape.set_backward_probe([&](std::size_t node, std::span<double>) { visited.push_back(node); });
  tape.backward(loss);
  REQUIRE(visited.size() == 4);
  CHECK(std::is_sorted(visited.rbegin(), visited.rend()));
  CHECK(visited.front() == loss.node());
}

TEST_CASE("gradients of a sum equal the sum of gradients") {
  Rng rng(5);
  const TD x0 = fd::random_tensor(rng, {3, 4});
  const TD w = fd::random_tensor(rng, {4, 2});
  auto f = [&](const TD& x) { return sum(gelu(matmul(x, w))); };
  auto g = [&](const TD& x) { return mean(square(softmax(x, 1))); };

  Tape<double> both;
  const TD xb = both.parameter("x", x0);
  const auto gb = both.backward(add(f(xb), g(xb)));
  Tape<double> t1, t2;
  const auto g1 = t1.backward(f(t1.parameter("x", x0)));
  const auto g2 = t2.backward(g(t2.parameter("x", x0)));
  for (std::size_t i = 0; i < x0.numel(); ++i) {
    CHECK(gb.at("x")[i] == doctest::Approx(g1.at("x")[i] + g2.at("x")[i]).epsilon(1e-14));
  }
}

TEST_CASE("forward evaluation is deterministic") {
  Rng rng(9);
  const auto x = fd::random_tensor(rng, {6, 8}).cast<float>();
  const auto w = fd::random_tensor(rng, {8, 8}).cast<float>();
  auto run = [&] { return softmax(gelu(matmul(x, w)), 1).values(); };
  CHECK(run() == run());
}

TEST_CASE("mixed tapes are rejected") {
  Tape<double> t1, t2;
  const TD a = t1.parameter("a", TD::full({2}, 1));
  const TD b = t2.parameter("b", TD::full({2}, 1));
  CHECK_THROWS_AS(add(a, b), ContractError);
}

TEST_CASE("tensor file layout") {
  std::ostringstream out;
  write_tensor(out, Tensor<float>({1, 2}, {1.0f, -2.0f}));
  const std::string bytes = out.str();
  REQUIRE(bytes.size() == 4 + 3 + 16 + 8);
  CHECK(bytes.substr(0, 4) == "TVEC");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(bytes[6] == 2);
  CHECK(bytes[7] == 1);   // extent 0, LE
  CHECK(bytes[15] == 2);  // extent 1, LE
  CHECK(static_cast<unsigned char>(bytes[25]) == 0x80);  // 1.0f = 0x3f800000
  CHECK(static_cast<unsigned char>(bytes[26]) == 0x3f);
  CHECK(static_cast<unsigned char>(bytes[30]) == 0xc0);  // -2.0f = 0xc0000000

  std::istringstream bad(std::string("TVEX") + bytes.substr(4));
  CHECK_THROWS_AS(read_tensor(bad), DataError);
  std::istringstream truncated(bytes.substr(0, bytes.size() - 1));
  CHECK_THROWS_AS(read_tensor(truncated), DataError);
}

TEST_CASE("tensor file round trip over random shapes") {
  Rng rng(77);
  for (int trial = 0; trial < 50; ++trial) {
    Shape shape(rng.below(4));
    for (auto& e : shape) e = 1 + rng.below(5);
    const auto t = fd::random_tensor(rng, shape, -1e3, 1e3).cast<float>();
    std::stringstream ss;
    write_tensor(ss, t);
    const auto back = read_tensor(ss);
    CHECK(back.shape() == t.shape());
    CHECK(back.values() == t.values());
  }
}
