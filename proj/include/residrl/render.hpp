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

#include <cstdint>
#include <string>

#include "residrl/sim.hpp"

namespace residrl {

enum class View { kFront, kWrist };

/// Test fixtures toggle scene elements; production rendering draws both.
struct SceneFlags {
  bool draw_peg = true;
  bool draw_socket = true;
};

/// Rasterize one 32x32 grayscale view. The front view is a fixed world-axis
/// window centered on the believed socket position (where the camera was
/// aimed); the wrist view is centered on and rotates with the end effector.
/// The socket block is drawn at its TRUE pose. render_seed selects the
/// palette and wall texture; with a fixed palette the peg-pixel footprint is
/// purely geometric. Edges are resolved by 4x4 supersampling, which matters
/// because millimeter-scale goal errors are below one pixel pitch.
Image render(const Pose2& ee_pose, const DomainConfig& cfg, View view,
             SceneFlags flags = {});

/// 8-bit quantization used for replay storage. Policies consume images
/// through quantize/dequantize in both acting and training so the two paths
/// see identical pixel values.
std::array<uint8_t, Image::kPixels> quantize(const Image& img);
Image dequantize(const std::array<uint8_t, Image::kPixels>& bytes);

/// Binary portable graymap (P5) debug dump.
void write_pgm(const std::string& path, const Image& img);

}  // namespace residrl
