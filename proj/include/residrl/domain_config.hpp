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

#pragma once

#include <string>

#include "residrl/geom.hpp"

namespace residrl {

/// Contact footprint of the peg. The round analog presents the same width on
/// both contact faces regardless of yaw (two discs stacked along the peg
/// axis), so small yaw errors do not change the effective footprint. The
/// rectangular analog is a full rectangle whose corners make the footprint
/// grow with |yaw|, which is what makes it yaw-sensitive.
enum class PegShape { kRoundAnalog, kRectangularAnalog };

/// Full parameterization of one environment instance. The sim-to-real gap is
/// literally the difference between two of these records: one nominal domain
/// for base-policy pretraining and one perturbed domain standing in for the
/// real world (different friction, stiffness, clearance, goal noise, sensor
/// noise, and rendering palette).
struct DomainConfig {
  // Part geometry (mm).
  double peg_width = 10.0;
  double peg_height = 16.0;
  PegShape peg_shape = PegShape::kRoundAnalog;
  double socket_clearance = 1.0;   // per side
  double insertion_depth = 16.0;   // slot depth below the mouth

  // Cartesian impedance controller (force per mm, force*s per mm).
  double controller_stiffness_k = 100.0;
  double controller_damping_c = 20.0;
  // Rotational impedance (torque per deg, torque*s per deg). Contact torques
  // (mm cross force) are fed into the same deg-based rotational dynamics; the
  // virtual inertia absorbs the unit convention.
  double rotational_stiffness = 5.0;
  double rotational_damping = 3.2;
  double virtual_mass = 1.0;
  double virtual_inertia = 0.5;

  // Penalty contact.
  double contact_stiffness = 500.0;  // force per mm penetration
  double contact_friction_mu = 0.3;
  double friction_damping = 5.0;     // force*s per mm, capped by mu*|Fn|

  // Goal-noise model: uniform half-widths applied to the believed goal pose
  // at every reset.
  double goal_noise_xy = 0.0;   // mm
  double goal_noise_yaw = 0.0;  // deg

  // Std of additive Gaussian noise on the force/torque reading exposed to
  // the residual observation. The true wrench in SimState is never noised.
  double sensor_noise_ft = 0.0;

  // Physical socket pose and the pose the goal pipeline believes. They are
  // equal except in robustness sweeps, where the socket is displaced while
  // the state-based goal input stays stale.
  Pose2 socket_pose_true{0.0, 0.0, 0.0};
  Pose2 socket_pose_belief{0.0, 0.0, 0.0};

  // Rendering appearance seed: palette and wall texture only, never geometry.
  long render_seed = 1;

  // Action scaling: mm and deg of pose-target increment per unit action.
  double action_scale_trans = 2.0;
  double action_scale_rot = 2.0;

  // Policy-level action integrator: increments apply to the previous target
  // instead of the measured pose. Off in pretraining, on in deployment.
  bool plai_mode = false;

  double physics_dt = 1.0 / 600.0;
  double control_dt = 1.0 / 15.0;
  long horizon_steps = 150;

  // Camera framing (mm half-width of the square window). The front view is a
  // fixed world window centered on the believed socket pose; the wrist view
  // tracks and rotates with the end effector.
  double camera_front_halfwidth = 40.0;
  double camera_wrist_halfwidth = 16.0;

  // Episodes abort with a failure flag when |x| or |y| exceeds this (mm).
  double workspace_limit = 500.0;

  /// Nominal simulated training domain.
  static DomainConfig nominal();
  /// Default perturbed "real" deployment domain.
  static DomainConfig real_default();
  /// Cross-task transfer domain: rectangular-analog peg, initial yaw noise,
  /// tighter clearance.
  static DomainConfig transfer_default();

  /// Throws std::invalid_argument when invariants are violated
  /// (clearance > 0, control_dt an integer multiple of physics_dt,
  /// positive action scales, positive geometry).
  void validate() const;

  /// Number of physics substeps per control step.
  int substeps() const;

  /// Flat `name = value` document round-trip.
  static DomainConfig load(const std::string& path);
  void save(const std::string& path) const;
  std::string to_text() const;
  static DomainConfig from_text(const std::string& text, const std::string& origin);
};

}  // namespace residrl
