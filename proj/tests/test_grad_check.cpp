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

#include "doctest.h"
#include "mimkit/errors.hpp"
#include "mimkit/grad_check.hpp"

using namespace mimkit;

TEST_CASE("tiny model gradients match finite differences") {
  const GradCheckReport r = grad_check(GradCheckConfig{});
  CHECK(r.max_rel_err < 1e-4);
  CHECK(r.scalars_checked > 1000);
  CHECK(r.seconds < 60.0);
}

TEST_CASE("patch-loss slice with lambda = 0") {
  GradCheckConfig c;
  c.loss.lambda = 0;
  CHECK(grad_check(c).max_rel_err < 1e-4);
}

TEST_CASE("sum aggregation and channel-sum reduction") {
  GradCheckConfig c;
  c.model.aggregate = Aggregate::kSum;
  c.loss.reduction = ChannelReduction::kSum;
  c.seed = 3;
  // The channel sum multiplies the loss by D_t, and finite-difference roundoff
  // on structurally zero gradients (key biases) grows with it.
  c.rel_floor = 1e-6;
  CHECK(grad_check(c).max_rel_err < 1e-4);
}

TEST_CASE("a corrupted backward pass is detected") {
  GradCheckConfig c;
  c.instrument = [](Tape<double>& tape) {
    tape.set_backward_probe([](std::size_t node, std::span<double> g) {
      if (node % 7 == 3)
        for (double& v : g) v *= 1.5;
    });
  };
  CHECK(grad_check(c).max_rel_err > 1e-2);
}

TEST_CASE("grad-check config validation") {
  GradCheckConfig c;
  c.model.embed_dim = 32;
  c.model.dec_width = 32;
  CHECK_THROWS_AS(grad_check(c), ConfigError);
  c = GradCheckConfig{};
  c.teacher.dim = 8;
  CHECK_THROWS_AS(grad_check(c), ConfigError);
}
