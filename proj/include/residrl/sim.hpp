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

#include <array>
#include <vector>

#include "residrl/domain_config.hpp"
#include "residrl/geom.hpp"
#include "residrl/rng.hpp"

namespace residrl {

struct Wrench2 {
  double fx = 0.0;
  double fy = 0.0;
  double tau = 0.0;
};

/// Raw simulator state. contact_wrench is the TRUE summed penalty wrench over
/// the most recent control step; sensor noise is applied only on the residual
/// observation path, never here.
struct SimState {
  Pose2 ee_pose;
  Twist2 ee_twist;
  Pose2 target_pose;
  Pose2 goal_pose_true;   // fully-inserted end-effector pose
  Pose2 goal_pose_noisy;  // believed goal + per-episode uniform noise
  Wrench2 contact_wrench;
  long step_count = 0;
  bool diverged = false;
};

/// Observation for the state-based base policy: knows the (noisy) goal, sees
/// no images and no force.
struct BaseObs {
  Pose2 ee_pose;
  Twist2 ee_twist;
  Pose2 goal_pose_noisy;
  std::array<double, 3> goal_minus_ee;

  static constexpr int kDim = 12;
  std::array<double, kDim> flatten() const;
};

struct Image {
  static constexpr int kH = 32;
  static constexpr int kW = 32;
  static constexpr int kPixels = kH * kW;
  // Row-major, row 0 at the top, values in [0,1].
  std::array<double, kPixels> px{};

  double& at(int row, int col) { return px[row * kW + col]; }
  double at(int row, int col) const { return px[row * kW + col]; }
};

/// Observation for the residual policy: proprioception, sensed wrench, and two
/// camera views. Deliberately contains no goal pose and no socket pose; the
/// only routes to the socket are the images and the contact wrench.
struct ResidualObs {
  Pose2 ee_pose;
  Twist2 ee_twist;
  Wrench2 contact_wrench;  // true wrench + sensor noise
  Image image_front;
  Image image_wrist;

  static constexpr int kProprioDim = 9;
  std::array<double, kProprioDim> flatten_proprio() const;
};

/// One penalty contact between the peg and the socket block.
struct ContactPoint {
  double px, py;          // world contact point (mm)
  double nx, ny;          // world unit normal, pushing the peg out
  double penetration;     // mm
  double fn;              // normal force magnitude = contact_stiffness * penetration
  double fx, fy;          // total force on the peg at this point (normal + friction)
};

/// Enumerate penalty contacts for the peg at `ee` against the socket block of
/// `cfg` (true socket pose). Friction uses the contact-point velocity derived
/// from `twist`. Pure function; exposed for oracle tests and contact probes.
std::vector<ContactPoint> contact_points(const Pose2& ee, const Twist2& twist,
                                         const DomainConfig& cfg);

/// Net wrench (about the end-effector origin) of contact_points.
Wrench2 contact_wrench_at(const Pose2& ee, const Twist2& twist,
                          const DomainConfig& cfg);

/// True iff the end effector is within 3 mm translation and 5 deg rotation of
/// the fully-inserted goal pose. Always evaluated against the true goal.
bool check_success(const SimState& state, const DomainConfig& cfg);

/// Straight-line pose sequence along the socket's insertion axis, from 20 mm
/// above the inserted goal down to the goal (assembly order). n_waypoints >= 2.
std::vector<Pose2> disassembly_path(const DomainConfig& cfg, int n_waypoints);

/// Fully-inserted end-effector goal pose for this domain.
Pose2 inserted_goal_pose(const DomainConfig& cfg);

struct StepResult {
  double reward = 0.0;  // 1.0 on the step that achieves insertion, else 0
  bool done = false;
  bool success = false;
};

/// Planar peg-in-hole environment. One instance per worker; all randomness is
/// drawn from the per-episode stream seeded at reset, so a (cfg, seed, action
/// sequence) triple fully determines the trajectory bit for bit.
class Simulator {
 public:
  explicit Simulator(const DomainConfig& cfg);

  void reset(uint64_t episode_seed);

  /// Advance one control step (cfg.substeps() physics substeps). The action
  /// must already be clamped to [-1,1].
  StepResult step(const ActionDelta& action);

  BaseObs obs_base() const;
  /// Renders both views. The sensed wrench (with sensor noise drawn during
  /// step) is cached, so calling this any number of times per step is stable.
  ResidualObs obs_residual() const;

  const SimState& state() const { return state_; }
  const DomainConfig& cfg() const { return cfg_; }

  /// Replace the raw state (probe tooling and tests). The cached sensed
  /// wrench and the episode RNG stream are left untouched.
  void set_state(const SimState& s) { state_ = s; }

 private:
  DomainConfig cfg_;
  SimState state_;
  Wrench2 sensed_wrench_;
  Rng rng_;
};

}  // namespace residrl
