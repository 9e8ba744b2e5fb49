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

#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "mimkit/errors.hpp"
#include "mimkit/losses.hpp"
#include "mimkit/masking.hpp"
#include "mimkit/rng.hpp"

using namespace mimkit;

namespace {

PatchMask mask_of(std::size_t grid, std::vector<std::size_t> masked) {
  std::vector<bool> bits(grid * grid, false);
  for (std::size_t i : masked) bits[i] = true;
  return PatchMask(grid, bits);
}

double patch_value(const Tensor<double>& z, const Tensor<double>& y, const PatchMask& m, const LossConfig& c) {
  return patch_loss(z, y, m, c).item();
}

// Direct restatement of the patch objective, for cross-checking.
double patch_oracle(const Tensor<double>& z, const Tensor<double>& y, const PatchMask& m, double beta) {
  const std::size_t d = z.dim(1);
  double total = 0;
  for (std::size_t i : m.masked()) {
    double row = 0;
    for (std::size_t c = 0; c < d; ++c) row += smooth_l1(y.at(i, c) - z.at(i, c), beta);
    total += row / static_cast<double>(d);
  }
  return total / static_cast<double>(m.masked().size());
}

double global_oracle(const Tensor<double>& p, const Tensor<double>& y, double beta) {
  const std::size_t d = p.dim(1);
  double total = 0;
  for (std::size_t c = 0; c < d; ++c) {
    double mp = 0, my = 0;
    for (std::size_t i = 0; i < p.dim(0); ++i) mp += p.at(i, c);
    for (std::size_t i = 0; i < y.dim(0); ++i) my += y.at(i, c);
    total += smooth_l1(mp / static_cast<double>(p.dim(0)) - my / static_cast<double>(y.dim(0)), beta);
  }
  return total / static_cast<double>(d);
}

}  // namespace

TEST_CASE("smooth_l1 values") {
  CHECK(smooth_l1(0.0, 2.0) == 0.0);
  CHECK(smooth_l1(1.0, 2.0) == 0.25);
  CHECK(smooth_l1(2.0, 2.0) == 1.0);
  CHECK(smooth_l1(3.0, 2.0) == 2.0);
  CHECK(smooth_l1(-3.0, 2.0) == 2.0);
}

TEST_CASE("smooth_l1 is continuous and C1 at the transition") {
  for (double beta : {0.5, 1.0, 2.0}) {
    const double quad = 0.5 * beta * beta / beta, lin = beta - 0.5 * beta;
    CHECK(std::abs(quad - lin) < 1e-12);
    const double eps = 1e-9;
    CHECK(std::abs(smooth_l1(beta - eps, beta) - smooth_l1(beta + eps, beta)) < 1e-8);
    const double left_slope = (smooth_l1(beta, beta) - smooth_l1(beta - 1e-6, beta)) / 1e-6;
    const double right_slope = (smooth_l1(beta + 1e-6, beta) - smooth_l1(beta, beta)) / 1e-6;
    CHECK(std::abs(left_slope - 1.0) < 1e-5);
    CHECK(std::abs(right_slope - 1.0) < 1e-5);
  }
}

TEST_CASE("smooth_l1 is even") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-10, 10), beta = rng.uniform(0.1, 4);
    CHECK(smooth_l1(x, beta) == smooth_l1(-x, beta));
  }
}

TEST_CASE("patch loss examples") {
  LossConfig cfg;
  const PatchMask m = mask_of(2, {1});
  Tensor<double> y({4, 1}, {0, 1, 0, 0});
  Tensor<double> z({4, 1});
  CHECK(patch_value(z, y, m, cfg) == 0.25);
  CHECK(patch_value(y, y, m, cfg) == 0.0);
  const PatchMask none = PatchMask::all_visible(2);
  CHECK_THROWS_AS(patch_loss(z, y, none, cfg), DegenerateMaskError);
  CHECK_THROWS_AS(patch_loss(Tensor<double>({3, 1}), y, m, cfg), DimensionError);
}

TEST_CASE("global loss examples") {
  LossConfig cfg;
  const PatchMask m = mask_of(2, {0, 3});
  Tensor<double> p({2, 1}, {3, 3});
  Tensor<double> y({4, 1});
  CHECK(global_loss(p, y, m, cfg).item() == 2.0);
  Tensor<double> same({2, 1}, {1, 3});
  Tensor<double> y2({4, 1}, {0, 2, 2, 4});
  CHECK(global_loss(same, y2, m, cfg).item() == 0.0);
  CHECK_THROWS_AS(global_loss(Tensor<double>({0, 1}), y, mask_of(2, {0, 1, 2, 3}), cfg), DegenerateMaskError);
}

TEST_CASE("total loss examples") {
  const Tensor<double> a = Tensor<double>::scalar(0.2), b = Tensor<double>::scalar(0.4);
  CHECK(total_loss(a, b, 0.5).item() == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(total_loss(a, b, 0.0).item() == 0.2);
  CHECK(total_loss(Tensor<double>::scalar(0), Tensor<double>::scalar(0), 1.0).item() == 0.0);
}

TEST_CASE("losses match direct restatements; sum reduction scales by D") {
  Rng rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng.below(6);
    const MaskSpec spec{16, 4, 8, 0.5, rng.next_u64()};
    const PatchMask m = generate_mask(spec);
    const Tensor<double> z = fd::random_tensor(rng, {16, d}, -4, 4), y = fd::random_tensor(rng, {16, d}, -4, 4);
    const Tensor<double> p = fd::random_tensor(rng, {m.visible().size(), d}, -4, 4);
    LossConfig cfg;
    CHECK(patch_value(z, y, m, cfg) == doctest::Approx(patch_oracle(z, y, m, 2.0)).epsilon(1e-12));
    CHECK(global_loss(p, y, m, cfg).item() == doctest::Approx(global_oracle(p, y, 2.0)).epsilon(1e-12));
    LossConfig sum = cfg;
    sum.reduction = ChannelReduction::kSum;
    CHECK(patch_value(z, y, m, sum) == doctest::Approx(patch_value(z, y, m, cfg) * d).epsilon(1e-12));
  }
}

TEST_CASE("patch loss ignores visible slots; global loss ignores common shifts") {
  Rng rng(7);
  LossConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const PatchMask m = generate_mask(MaskSpec{16, 4, 8, 0.5, rng.next_u64()});
    const Tensor<double> z = fd::random_tensor(rng, {16, 3}), y = fd::random_tensor(rng, {16, 3});
    Tensor<double> z2 = z;
    for (std::size_t i : m.visible())
      for (std::size_t c = 0; c < 3; ++c) z2.mutable_data()[i * 3 + c] = rng.uniform(-100, 100);
    CHECK(patch_value(z, y, m, cfg) == patch_value(z2, y, m, cfg));

    const Tensor<double> p = fd::random_tensor(rng, {m.visible().size(), 3});
    Tensor<double> ps = p, ys = y;
    const double shift[3] = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(-3, 3)};
    for (std::size_t i = 0; i < ps.numel(); ++i) ps.mutable_data()[i] += shift[i % 3];
    for (std::size_t i = 0; i < ys.numel(); ++i) ys.mutable_data()[i] += shift[i % 3];
    CHECK(global_loss(ps, ys, m, cfg).item() == doctest::Approx(global_loss(p, y, m, cfg).item()).epsilon(1e-12));
  }
}

TEST_CASE("permutation invariance over masked, visible and teacher tokens") {
  Rng rng(9);
  LossConfig cfg;
  const PatchMask m = generate_mask(MaskSpec{16, 4, 8, 0.5, 4});
  const Tensor<double> z = fd::random_tensor(rng, {16, 2}), y = fd::random_tensor(rng, {16, 2});
  const Tensor<double> p = fd::random_tensor(rng, {m.visible().size(), 2});
  // Swap two masked rows in both z and y: the mask is unchanged.
  const std::size_t a = m.masked().front(), b = m.masked().back();
  Tensor<double> zs = z, ys = y;
  for (std::size_t c = 0; c < 2; ++c) {
    std::swap(zs.mutable_data()[a * 2 + c], zs.mutable_data()[b * 2 + c]);
    std::swap(ys.mutable_data()[a * 2 + c], ys.mutable_data()[b * 2 + c]);
  }
  CHECK(patch_value(zs, ys, m, cfg) == doctest::Approx(patch_value(z, y, m, cfg)).epsilon(1e-14));
  Tensor<double> pr = p, yr = y;
  std::reverse(pr.mutable_data().begin(), pr.mutable_data().end());
  std::reverse(yr.mutable_data().begin(), yr.mutable_data().end());
  // Reversing the flat data reverses rows and channels; undo the channel swap.
  for (std::size_t i = 0; i < pr.dim(0); ++i) std::swap(pr.mutable_data()[2 * i], pr.mutable_data()[2 * i + 1]);
  for (std::size_t i = 0; i < yr.dim(0); ++i) std::swap(yr.mutable_data()[2 * i], yr.mutable_data()[2 * i + 1]);
  CHECK(global_loss(pr, yr, m, cfg).item() == doctest::Approx(global_loss(p, y, m, cfg).item()).epsilon(1e-14));
}

TEST_CASE("scaling residuals by c > 1 never decreases the patch loss") {
  Rng rng(11);
  LossConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const PatchMask m = generate_mask(MaskSpec{16, 4, 8, 0.5, rng.next_u64()});
    const Tensor<double> y = fd::random_tensor(rng, {16, 4}, -3, 3), z = fd::random_tensor(rng, {16, 4}, -3, 3);
    const double c = rng.uniform(1.0, 4.0);
    Tensor<double> zc = y;
    for (std::size_t i = 0; i < zc.numel(); ++i) zc.mutable_data()[i] = y[i] - c * (y[i] - z[i]);
    CHECK(patch_value(zc, y, m, cfg) >= patch_value(z, y, m, cfg));
  }
}

TEST_CASE("loss gradients match finite differences") {
  Rng rng(13);
  for (double beta : {0.5, 1.0, 2.0}) {
    LossConfig cfg;
    cfg.beta = beta;
    const PatchMask m = generate_mask(MaskSpec{16, 4, 8, 0.5, rng.next_u64()});
    const Tensor<double> y = fd::random_tensor(rng, {16, 3}, -2, 2);
    const Tensor<double> z0 = fd::random_tensor(rng, {16, 3}, -2, 2);
    const Tensor<double> p0 = fd::random_tensor(rng, {m.visible().size(), 3}, -2, 2);

    Tape<double> tape;
    const Tensor<double> z = tape.parameter("z", z0), p = tape.parameter("p", p0);
    const Tensor<double> loss = total_loss(patch_loss(z, y, m, cfg), global_loss(p, y, m, cfg), 0.5);
    const auto grads = tape.backward(loss);

    const auto fz = [&](const Tensor<double>& x) { return patch_loss(x, y, m, cfg).item(); };
    const auto fp = [&](const Tensor<double>& x) { return 0.5 * global_loss(x, y, m, cfg).item(); };
    CHECK(fd::max_rel_err(grads.at("z").data(), fd::numeric_grad(fz, z0)) < 1e-4);
    CHECK(fd::max_rel_err(grads.at("p").data(), fd::numeric_grad(fp, p0)) < 1e-4);
  }
}

TEST_CASE("loss config validation and JSON") {
  LossConfig c;
  c.beta = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = LossConfig{};
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  LossConfig r;
  r.reduction = ChannelReduction::kSum;
  r.lambda = 0.25;
  CHECK(nlohmann::json(r).get<LossConfig>() == r);
}
