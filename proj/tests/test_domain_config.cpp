// Copyright 2026 The residrl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <stdexcept>

#include "doctest.h"
#include "residrl/domain_config.hpp"

using residrl::DomainConfig;
using residrl::PegShape;

TEST_CASE("nominal defaults satisfy their own invariants") {
  DomainConfig d = DomainConfig::nominal();
  CHECK_NOTHROW(d.validate());
  CHECK(d.substeps() == 40);
  CHECK(d.socket_clearance > 0.0);
  CHECK_FALSE(d.plai_mode);
  CHECK(d.goal_noise_xy == 0.0);
}

TEST_CASE("real domain differs from nominal where the gap lives") {
  DomainConfig nom = DomainConfig::nominal();
  DomainConfig real = DomainConfig::real_default();
  CHECK_NOTHROW(real.validate());
  CHECK(real.contact_friction_mu > nom.contact_friction_mu);
  CHECK(real.controller_stiffness_k < nom.controller_stiffness_k);
  CHECK(real.socket_clearance < nom.socket_clearance);
  CHECK(real.goal_noise_xy > 0.0);
  CHECK(real.sensor_noise_ft > 0.0);
  CHECK(real.render_seed != nom.render_seed);
  CHECK(real.plai_mode);
  // geometry itself is shared, only the physics and sensing shift
  CHECK(real.peg_width == nom.peg_width);
  CHECK(real.peg_shape == nom.peg_shape);
}

TEST_CASE("transfer domain swaps the footprint and adds yaw noise") {
  DomainConfig t = DomainConfig::transfer_default();
  CHECK_NOTHROW(t.validate());
  CHECK(t.peg_shape == PegShape::kRectangularAnalog);
  CHECK(t.goal_noise_yaw > 0.0);
}

TEST_CASE("validate rejects broken configurations") {
  DomainConfig d = DomainConfig::nominal();
  d.socket_clearance = 0.0;
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);

  d = DomainConfig::nominal();
  d.control_dt = d.physics_dt * 2.5;
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);

  d = DomainConfig::nominal();
  d.action_scale_trans = -1.0;
  CHECK_THROWS_AS(d.validate(), std::invalid_argument);
}

TEST_CASE("text round-trip preserves every field") {
  DomainConfig d = DomainConfig::transfer_default();
  d.socket_pose_true = {3.25, -1.5, 7.0};
  d.socket_pose_belief = {3.0, -1.0, 6.0};
  d.goal_noise_xy = 0.875;
  d.horizon_steps = 123;
  DomainConfig back = DomainConfig::from_text(d.to_text(), "<roundtrip>");
  CHECK(back.to_text() == d.to_text());
  CHECK(back.peg_shape == d.peg_shape);
  CHECK(back.socket_pose_belief.x == d.socket_pose_belief.x);
  CHECK(back.goal_noise_xy == d.goal_noise_xy);
  CHECK(back.horizon_steps == d.horizon_steps);
  CHECK(back.plai_mode == d.plai_mode);
}

TEST_CASE("belief defaults to the true socket pose when absent") {
  DomainConfig d = DomainConfig::from_text(
      "socket_pose_true_x = 5\nsocket_pose_true_y = -2\n", "<t>");
  CHECK(d.socket_pose_belief.x == 5.0);
  CHECK(d.socket_pose_belief.y == -2.0);
}
