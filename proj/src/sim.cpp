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

#include "residrl/sim.hpp"

#include <cmath>
#include <stdexcept>

#include "residrl/render.hpp"

namespace residrl {

namespace {

// Socket block footprint beyond the slot, mm. Shared with the renderer.
constexpr double kWallWidth = 15.0;
constexpr double kFloorHeight = 6.0;
// Reset height above the (noisy) goal and the span of the retreat path.
constexpr double kApproachHeight = 20.0;

struct Box {
  double xmin, xmax, ymin, ymax;
};

// Axis-aligned socket geometry in the socket frame: two walls flanking the
// slot and a floor underneath. The slot mouth is the origin, +y points out.
std::array<Box, 3> socket_boxes(const DomainConfig& cfg) {
  const double half_slot = cfg.peg_width / 2.0 + cfg.socket_clearance;
  const double d = cfg.insertion_depth;
  return {Box{-half_slot - kWallWidth, -half_slot, -d, 0.0},
          Box{half_slot, half_slot + kWallWidth, -d, 0.0},
          Box{-half_slot - kWallWidth, half_slot + kWallWidth, -d - kFloorHeight, -d}};
}

struct Frame {
  double tx, ty, cos_t, sin_t;
  // world -> local
  void to_local(double wx, double wy, double& lx, double& ly) const {
    const double dx = wx - tx, dy = wy - ty;
    lx = cos_t * dx + sin_t * dy;
    ly = -sin_t * dx + cos_t * dy;
  }
  void to_world(double lx, double ly, double& wx, double& wy) const {
    wx = tx + cos_t * lx - sin_t * ly;
    wy = ty + sin_t * lx + cos_t * ly;
  }
  void dir_to_world(double lx, double ly, double& wx, double& wy) const {
    wx = cos_t * lx - sin_t * ly;
    wy = sin_t * lx + cos_t * ly;
  }
};

Frame frame_of(const Pose2& p) {
  const double t = p.theta * kDegToRad;
  return Frame{p.x, p.y, std::cos(t), std::sin(t)};
}

// Penetration of a disc (center in box frame) into an axis-aligned box.
// Returns false when separated. Normal points from the box toward the disc.
bool disc_box_penetration(double cx, double cy, double r, const Box& b,
                          double& pen, double& nx, double& ny) {
  const double qx = std::clamp(cx, b.xmin, b.xmax);
  const double qy = std::clamp(cy, b.ymin, b.ymax);
  const double dx = cx - qx, dy = cy - qy;
  const double d2 = dx * dx + dy * dy;
  if (d2 > 0.0) {
    const double d = std::sqrt(d2);
    if (d >= r) return false;
    pen = r - d;
    nx = dx / d;
    ny = dy / d;
    return true;
  }
  // Center inside the box: push out along the axis of least depth.
  const double depth_left = cx - b.xmin;
  const double depth_right = b.xmax - cx;
  const double depth_down = cy - b.ymin;
  const double depth_up = b.ymax - cy;
  double best = depth_left;
  nx = -1.0;
  ny = 0.0;
  if (depth_right < best) { best = depth_right; nx = 1.0; ny = 0.0; }
  if (depth_down < best) { best = depth_down; nx = 0.0; ny = -1.0; }
  if (depth_up < best) { best = depth_up; nx = 0.0; ny = 1.0; }
  pen = r + best;
  return true;
}

void add_contact(std::vector<ContactPoint>& out, const Pose2& ee,
                 const Twist2& twist, const DomainConfig& cfg, double px,
                 double py, double nx, double ny, double pen) {
  ContactPoint c;
  c.px = px;
  c.py = py;
  c.nx = nx;
  c.ny = ny;
  c.penetration = pen;
  c.fn = cfg.contact_stiffness * pen;

  // Velocity of the material point of the peg at the contact.
  const double omega_rad = twist.omega * kDegToRad;
  const double rx = px - ee.x, ry = py - ee.y;
  const double vx = twist.vx - omega_rad * ry;
  const double vy = twist.vy + omega_rad * rx;
  // Tangential part; viscous friction capped by the Coulomb cone.
  const double vn = vx * nx + vy * ny;
  const double tx = vx - vn * nx, ty = vy - vn * ny;
  const double vt = std::sqrt(tx * tx + ty * ty);
  double ffx = 0.0, ffy = 0.0;
  if (vt > 1e-12) {
    const double mag =
        std::min(cfg.friction_damping * vt, cfg.contact_friction_mu * c.fn);
    ffx = -mag * tx / vt;
    ffy = -mag * ty / vt;
  }
  c.fx = c.fn * nx + ffx;
  c.fy = c.fn * ny + ffy;
  out.push_back(c);
}

}  // namespace

std::vector<ContactPoint> contact_points(const Pose2& ee, const Twist2& twist,
                                         const DomainConfig& cfg) {
  std::vector<ContactPoint> out;
  const auto boxes = socket_boxes(cfg);
  const Frame socket = frame_of(cfg.socket_pose_true);
  const Frame peg = frame_of(ee);
  const double w2 = cfg.peg_width / 2.0;
  const double h2 = cfg.peg_height / 2.0;

  if (cfg.peg_shape == PegShape::kRoundAnalog) {
    // Two discs inscribed against the top and bottom faces. Yaw moves the
    // centers but never widens the footprint.
    const double r = w2;
    const double off = std::max(0.0, h2 - r);
    for (double ly : {off, -off}) {
      double cwx, cwy;
      peg.to_world(0.0, ly, cwx, cwy);
      double csx, csy;
      socket.to_local(cwx, cwy, csx, csy);
      for (const Box& b : boxes) {
        double pen, lnx, lny;
        if (!disc_box_penetration(csx, csy, r, b, pen, lnx, lny)) continue;
        double nx, ny;
        socket.dir_to_world(lnx, lny, nx, ny);
        // Deepest point of the disc along the inward normal.
        add_contact(out, ee, twist, cfg, cwx - nx * r, cwy - ny * r, nx, ny, pen);
      }
      if (off == 0.0) break;
    }
    return out;
  }

  // Rectangular analog: the corners are what jam. Peg corners against the
  // socket boxes, plus the slot's two mouth corners against the peg body
  // (edge-on-corner contact, e.g. a tilted peg leaning on the slot lip).
  for (double sx : {-1.0, 1.0}) {
    for (double sy : {-1.0, 1.0}) {
      double cwx, cwy;
      peg.to_world(sx * w2, sy * h2, cwx, cwy);
      double csx, csy;
      socket.to_local(cwx, cwy, csx, csy);
      for (const Box& b : boxes) {
        double pen, lnx, lny;
        if (!disc_box_penetration(csx, csy, 0.0, b, pen, lnx, lny)) continue;
        if (pen <= 0.0) continue;
        double nx, ny;
        socket.dir_to_world(lnx, lny, nx, ny);
        add_contact(out, ee, twist, cfg, cwx, cwy, nx, ny, pen);
      }
    }
  }
  const double half_slot = w2 + cfg.socket_clearance;
  for (double sx : {-1.0, 1.0}) {
    double qwx, qwy;
    socket.to_world(sx * half_slot, 0.0, qwx, qwy);
    double lx, ly;
    peg.to_local(qwx, qwy, lx, ly);
    if (std::abs(lx) >= w2 || std::abs(ly) >= h2) continue;
    // Push the peg so the lip corner exits through its nearest face.
    const double depth_xp = w2 - lx, depth_xn = w2 + lx;
    const double depth_yp = h2 - ly, depth_yn = h2 + ly;
    double pen = depth_xp;
    double lnx = -1.0, lny = 0.0;
    if (depth_xn < pen) { pen = depth_xn; lnx = 1.0; lny = 0.0; }
    if (depth_yp < pen) { pen = depth_yp; lnx = 0.0; lny = -1.0; }
    if (depth_yn < pen) { pen = depth_yn; lnx = 0.0; lny = 1.0; }
    double nx, ny;
    peg.dir_to_world(lnx, lny, nx, ny);
    add_contact(out, ee, twist, cfg, qwx, qwy, nx, ny, pen);
  }
  return out;
}

Wrench2 contact_wrench_at(const Pose2& ee, const Twist2& twist,
                          const DomainConfig& cfg) {
  Wrench2 w;
  for (const ContactPoint& c : contact_points(ee, twist, cfg)) {
    w.fx += c.fx;
    w.fy += c.fy;
    w.tau += (c.px - ee.x) * c.fy - (c.py - ee.y) * c.fx;
  }
  return w;
}

Pose2 inserted_goal_pose(const DomainConfig& cfg) {
  return local_offset(cfg.socket_pose_true, 0.0,
                      cfg.peg_height / 2.0 - cfg.insertion_depth);
}

bool check_success(const SimState& state, const DomainConfig& cfg) {
  (void)cfg;
  auto [trans_err, rot_err] = pose_error(state.ee_pose, state.goal_pose_true);
  return trans_err <= 3.0 && rot_err <= 5.0;
}

std::vector<Pose2> disassembly_path(const DomainConfig& cfg, int n_waypoints) {
  if (n_waypoints < 2)
    throw std::invalid_argument("disassembly_path needs at least 2 waypoints");
  const Pose2 goal = inserted_goal_pose(cfg);
  std::vector<Pose2> path;
  path.reserve(n_waypoints);
  for (int i = 0; i < n_waypoints; ++i) {
    const double frac = static_cast<double>(i) / (n_waypoints - 1);
    path.push_back(local_offset(goal, 0.0, kApproachHeight * (1.0 - frac)));
  }
  return path;
}

std::array<double, BaseObs::kDim> BaseObs::flatten() const {
  return {ee_pose.x,         ee_pose.y,         ee_pose.theta,
          ee_twist.vx,       ee_twist.vy,       ee_twist.omega,
          goal_pose_noisy.x, goal_pose_noisy.y, goal_pose_noisy.theta,
          goal_minus_ee[0],  goal_minus_ee[1],  goal_minus_ee[2]};
}

std::array<double, ResidualObs::kProprioDim> ResidualObs::flatten_proprio() const {
  return {ee_pose.x,   ee_pose.y,   ee_pose.theta,
          ee_twist.vx, ee_twist.vy, ee_twist.omega,
          contact_wrench.fx, contact_wrench.fy, contact_wrench.tau};
}

Simulator::Simulator(const DomainConfig& cfg) : cfg_(cfg), rng_(0) {
  cfg_.validate();
  reset(0);
}

void Simulator::reset(uint64_t episode_seed) {
  rng_ = Rng(episode_seed);
  state_ = SimState{};
  state_.goal_pose_true = inserted_goal_pose(cfg_);

  // The goal the policy is told about comes from the believed socket pose;
  // the noise draw order (x, y, yaw) is part of the determinism contract.
  Pose2 goal_belief = local_offset(cfg_.socket_pose_belief, 0.0,
                                   cfg_.peg_height / 2.0 - cfg_.insertion_depth);
  const double nx = rng_.uniform(-cfg_.goal_noise_xy, cfg_.goal_noise_xy);
  const double ny = rng_.uniform(-cfg_.goal_noise_xy, cfg_.goal_noise_xy);
  const double nyaw = rng_.uniform(-cfg_.goal_noise_yaw, cfg_.goal_noise_yaw);
  state_.goal_pose_noisy = Pose2{goal_belief.x + nx, goal_belief.y + ny,
                                 wrap_deg(goal_belief.theta + nyaw)};

  state_.ee_pose = local_offset(state_.goal_pose_noisy, 0.0, kApproachHeight);
  state_.target_pose = state_.ee_pose;
  state_.ee_twist = Twist2{0.0, 0.0, 0.0};
  state_.contact_wrench = Wrench2{};
  sensed_wrench_ = Wrench2{};
}

StepResult Simulator::step(const ActionDelta& action) {
  const Pose2& base = cfg_.plai_mode ? state_.target_pose : state_.ee_pose;
  state_.target_pose =
      Pose2{base.x + action.dx * cfg_.action_scale_trans,
            base.y + action.dy * cfg_.action_scale_trans,
            wrap_deg(base.theta + action.dtheta * cfg_.action_scale_rot)};

  const double dt = cfg_.physics_dt;
  const int n = cfg_.substeps();
  Wrench2 sum;
  for (int s = 0; s < n; ++s) {
    Wrench2 cw = contact_wrench_at(state_.ee_pose, state_.ee_twist, cfg_);
    sum.fx += cw.fx;
    sum.fy += cw.fy;
    sum.tau += cw.tau;

    const double fx = cfg_.controller_stiffness_k * (state_.target_pose.x - state_.ee_pose.x) -
                      cfg_.controller_damping_c * state_.ee_twist.vx + cw.fx;
    const double fy = cfg_.controller_stiffness_k * (state_.target_pose.y - state_.ee_pose.y) -
                      cfg_.controller_damping_c * state_.ee_twist.vy + cw.fy;
    const double tau =
        cfg_.rotational_stiffness * wrap_deg(state_.target_pose.theta - state_.ee_pose.theta) -
        cfg_.rotational_damping * state_.ee_twist.omega + cw.tau;

    state_.ee_twist.vx += dt * fx / cfg_.virtual_mass;
    state_.ee_twist.vy += dt * fy / cfg_.virtual_mass;
    state_.ee_twist.omega += dt * tau / cfg_.virtual_inertia;
    state_.ee_pose.x += dt * state_.ee_twist.vx;
    state_.ee_pose.y += dt * state_.ee_twist.vy;
    state_.ee_pose.theta = wrap_deg(state_.ee_pose.theta + dt * state_.ee_twist.omega);
  }
  state_.contact_wrench = sum;
  sensed_wrench_ =
      Wrench2{sum.fx + cfg_.sensor_noise_ft * rng_.normal(),
              sum.fy + cfg_.sensor_noise_ft * rng_.normal(),
              sum.tau + cfg_.sensor_noise_ft * rng_.normal()};
  state_.step_count += 1;

  StepResult r;
  const bool finite = std::isfinite(state_.ee_pose.x) && std::isfinite(state_.ee_pose.y) &&
                      std::isfinite(state_.ee_pose.theta) && std::isfinite(state_.ee_twist.vx) &&
                      std::isfinite(state_.ee_twist.vy) && std::isfinite(state_.ee_twist.omega);
  if (!finite || std::abs(state_.ee_pose.x) > cfg_.workspace_limit ||
      std::abs(state_.ee_pose.y) > cfg_.workspace_limit) {
    state_.diverged = true;
    r.done = true;
    return r;
  }
  r.success = check_success(state_, cfg_);
  if (r.success) {
    r.reward = 1.0;
    r.done = true;
  }
  if (state_.step_count >= cfg_.horizon_steps) r.done = true;
  return r;
}

BaseObs Simulator::obs_base() const {
  BaseObs o;
  o.ee_pose = state_.ee_pose;
  o.ee_twist = state_.ee_twist;
  o.goal_pose_noisy = state_.goal_pose_noisy;
  o.goal_minus_ee = {state_.goal_pose_noisy.x - state_.ee_pose.x,
                     state_.goal_pose_noisy.y - state_.ee_pose.y,
                     wrap_deg(state_.goal_pose_noisy.theta - state_.ee_pose.theta)};
  return o;
}

ResidualObs Simulator::obs_residual() const {
  ResidualObs o;
  o.ee_pose = state_.ee_pose;
  o.ee_twist = state_.ee_twist;
  o.contact_wrench = sensed_wrench_;
  o.image_front = render(state_.ee_pose, cfg_, View::kFront);
  o.image_wrist = render(state_.ee_pose, cfg_, View::kWrist);
  return o;
}

}  // namespace residrl
