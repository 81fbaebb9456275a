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
#include <cstdint>

namespace residrl {

/// Splittable deterministic generator (SplitMix64 core). Every random draw in
/// the project flows from one root seed through split() streams, so reruns
/// with the same seed are bitwise identical regardless of call interleaving
/// in unrelated streams.
class Rng {
 public:
  explicit Rng(uint64_t seed) : key_(mix(seed ^ kGolden)), state_(key_) {}

  /// Derive an independent stream. The child depends only on this generator's
  /// identity (seed and split lineage), never on how many draws were consumed,
  /// so stream layouts survive refactorings that change draw counts.
  Rng split(uint64_t stream) const {
    Rng r(0);
    r.key_ = mix(key_ ^ mix(stream + kGolden));
    r.state_ = r.key_;
    return r;
  }

  uint64_t next_u64() {
    state_ += kGolden;
    return mix(state_);
  }

  /// Uniform in [0, 1), 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  uint64_t uniform_index(uint64_t n) {
    // Multiply-shift rejection-free mapping; bias is < 2^-64 * n.
    return static_cast<uint64_t>((static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

  /// Standard normal via Box-Muller. Two uniforms per draw, no cached spare,
  /// so the draw count per call is fixed.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    // Guard the log against u1 == 0.
    u1 = u1 > 0.0 ? u1 : 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * kPi * u2);
  }

  double normal(double mean, double std) { return mean + std * normal(); }

 private:
  static constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;
  static constexpr double kPi = 3.14159265358979323846;

  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t key_;
  uint64_t state_;
};

}  // namespace residrl
