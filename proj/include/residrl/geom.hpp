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

#include <cmath>
#include <utility>

namespace residrl {

// Unit conventions used across the project: lengths in mm, angles in degrees
// wrapped to (-180, 180], time in seconds. All thresholds (3 mm / 5 deg
// success window, 2 cm start offset, ...) are stated in these units.

/// Wrap an angle in degrees to (-180, 180].
inline double wrap_deg(double deg) {
  double w = std::fmod(deg, 360.0);
  if (w <= -180.0) {
    w += 360.0;
  } else if (w > 180.0) {
    w -= 360.0;
  }
  return w;
}

constexpr double kDegToRad = 3.14159265358979323846 / 180.0;

/// Planar rigid pose: x, y in mm, theta in degrees wrapped to (-180, 180].
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
};

/// Planar velocity: vx, vy in mm/s, omega in deg/s.
struct Twist2 {
  double vx = 0.0;
  double vy = 0.0;
  double omega = 0.0;
};

/// Dimensionless incremental pose-target action, each component in [-1, 1].
struct ActionDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;
};

/// Componentwise pose addition with theta wrap.
inline Pose2 compose(const Pose2& p, const Pose2& d) {
  return Pose2{p.x + d.x, p.y + d.y, wrap_deg(p.theta + d.theta)};
}

/// Offset expressed in the pose's own frame (dy along the pose's +y axis).
/// Used for "along the insertion axis" displacements.
inline Pose2 local_offset(const Pose2& p, double dx, double dy) {
  const double c = std::cos(p.theta * kDegToRad);
  const double s = std::sin(p.theta * kDegToRad);
  return Pose2{p.x + c * dx - s * dy, p.y + s * dx + c * dy, p.theta};
}

/// Translation error (Euclidean norm over x, y, in mm) and rotation error
/// (absolute wrapped difference, in deg). Symmetric in its arguments.
inline std::pair<double, double> pose_error(const Pose2& p, const Pose2& goal) {
  const double dx = p.x - goal.x;
  const double dy = p.y - goal.y;
  return {std::sqrt(dx * dx + dy * dy), std::fabs(wrap_deg(p.theta - goal.theta))};
}

/// Componentwise clamp of a raw 3-vector action to [-1, 1].
/// Throws std::domain_error on non-finite components: a NaN or infinity here
/// means something upstream diverged numerically.
ActionDelta clamp_action(double dx, double dy, double dtheta);

inline ActionDelta clamp_action(const ActionDelta& a) {
  return clamp_action(a.dx, a.dy, a.dtheta);
}

/// Pre-clamp action sum (the combined base + residual action is clamped
/// separately, at execution time).
inline ActionDelta action_sum(const ActionDelta& a, const ActionDelta& b) {
  return ActionDelta{a.dx + b.dx, a.dy + b.dy, a.dtheta + b.dtheta};
}

}  // namespace residrl
