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

#include "residrl/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace residrl {

namespace {

constexpr double kWallWidth = 15.0;
constexpr double kFloorHeight = 6.0;
constexpr int kSub = 4;  // subsamples per pixel axis
constexpr double kTextureCellMm = 2.0;
constexpr double kTextureAmp = 0.06;

uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Stateless world-anchored texture hash: the pattern is glued to the socket
// block, not to the camera.
double texture_jitter(long seed, double wx, double wy) {
  const auto cx = static_cast<int64_t>(std::floor(wx / kTextureCellMm));
  const auto cy = static_cast<int64_t>(std::floor(wy / kTextureCellMm));
  uint64_t h = static_cast<uint64_t>(seed) ^ 0x9e3779b97f4a7c15ull;
  h = mix64(h ^ (static_cast<uint64_t>(cx) * 0xff51afd7ed558ccdull));
  h = mix64(h ^ (static_cast<uint64_t>(cy) * 0xc4ceb9fe1a85ec53ull));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return (u - 0.5) * 2.0 * kTextureAmp;
}

struct Palette {
  double bg, block, peg;
};

// Palette bands are disjoint so peg pixels can never alias into the block or
// background under any seed.
Palette palette_of(long render_seed) {
  Rng r(static_cast<uint64_t>(render_seed));
  Palette p;
  p.bg = 0.15 + 0.15 * r.uniform();
  p.block = 0.45 + 0.15 * r.uniform();
  p.peg = 0.80 + 0.15 * r.uniform();
  return p;
}

struct Rot {
  double c, s;
};

Rot rot_of(double theta_deg) {
  const double t = theta_deg * kDegToRad;
  return {std::cos(t), std::sin(t)};
}

bool in_peg(double wx, double wy, const Pose2& ee, const Rot& r, double w2,
            double h2) {
  const double dx = wx - ee.x, dy = wy - ee.y;
  const double lx = r.c * dx + r.s * dy;
  const double ly = -r.s * dx + r.c * dy;
  return std::abs(lx) <= w2 && std::abs(ly) <= h2;
}

bool in_socket_block(double wx, double wy, const Pose2& socket, const Rot& r,
                     double half_slot, double depth) {
  const double dx = wx - socket.x, dy = wy - socket.y;
  const double lx = r.c * dx + r.s * dy;
  const double ly = -r.s * dx + r.c * dy;
  const double outer = half_slot + kWallWidth;
  if (lx < -outer || lx > outer) return false;
  if (ly > 0.0 || ly < -depth - kFloorHeight) return false;
  if (ly < -depth) return true;                      // floor
  return lx <= -half_slot || lx >= half_slot;        // walls flanking the slot
}

}  // namespace

Image render(const Pose2& ee_pose, const DomainConfig& cfg, View view,
             SceneFlags flags) {
  const Palette pal = palette_of(cfg.render_seed);

  double cx, cy, hw;
  Rot vr;
  if (view == View::kFront) {
    cx = cfg.socket_pose_belief.x;
    cy = cfg.socket_pose_belief.y;
    hw = cfg.camera_front_halfwidth;
    vr = {1.0, 0.0};
  } else {
    cx = ee_pose.x;
    cy = ee_pose.y;
    hw = cfg.camera_wrist_halfwidth;
    vr = rot_of(ee_pose.theta);
  }

  const Rot peg_rot = rot_of(ee_pose.theta);
  const Rot socket_rot = rot_of(cfg.socket_pose_true.theta);
  const double w2 = cfg.peg_width / 2.0;
  const double h2 = cfg.peg_height / 2.0;
  const double half_slot = w2 + cfg.socket_clearance;

  Image img;
  for (int i = 0; i < Image::kH; ++i) {
    for (int j = 0; j < Image::kW; ++j) {
      double acc = 0.0;
      for (int si = 0; si < kSub; ++si) {
        for (int sj = 0; sj < kSub; ++sj) {
          const double u = (j + (sj + 0.5) / kSub) / Image::kW;
          const double v = (i + (si + 0.5) / kSub) / Image::kH;
          const double lx = (u - 0.5) * 2.0 * hw;
          const double ly = (0.5 - v) * 2.0 * hw;
          const double wx = cx + vr.c * lx - vr.s * ly;
          const double wy = cy + vr.s * lx + vr.c * ly;

          double val;
          if (flags.draw_peg && in_peg(wx, wy, ee_pose, peg_rot, w2, h2)) {
            val = pal.peg;
          } else if (flags.draw_socket &&
                     in_socket_block(wx, wy, cfg.socket_pose_true, socket_rot,
                                     half_slot, cfg.insertion_depth)) {
            val = pal.block + texture_jitter(cfg.render_seed, wx, wy);
          } else {
            val = pal.bg;
          }
          acc += val;
        }
      }
      img.at(i, j) = std::clamp(acc / (kSub * kSub), 0.0, 1.0);
    }
  }
  return img;
}

std::array<uint8_t, Image::kPixels> quantize(const Image& img) {
  std::array<uint8_t, Image::kPixels> out;
  for (int k = 0; k < Image::kPixels; ++k) {
    const double v = std::clamp(img.px[k], 0.0, 1.0);
    out[k] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

Image dequantize(const std::array<uint8_t, Image::kPixels>& bytes) {
  Image img;
  for (int k = 0; k < Image::kPixels; ++k) img.px[k] = bytes[k] / 255.0;
  return img;
}

void write_pgm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << "P5\n" << Image::kW << " " << Image::kH << "\n255\n";
  const auto bytes = quantize(img);
  os.write(reinterpret_cast<const char*>(bytes.data()),
           static_cast<std::streamsize>(bytes.size()));
}

}  // namespace residrl
