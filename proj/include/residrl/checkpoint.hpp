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
#include <vector>

#include "json.hpp"
#include "residrl/nn.hpp"

namespace residrl {

/// Versioned binary parameter container: magic + version + JSON header
/// describing named sections + concatenated little-endian float64 payload.
/// Sections hold network parameters and optimizer moments; meta holds
/// whatever the producer wants to record (specs, seeds, step counts).
struct Checkpoint {
  static constexpr char kMagic[9] = "RDRLCKPT";
  static constexpr uint32_t kVersion = 1;

  std::vector<std::pair<std::string, VectorXd>> sections;
  nlohmann::json meta;

  void add(const std::string& name, const VectorXd& data);
  bool has(const std::string& name) const;
  /// Throws std::out_of_range when the section does not exist.
  const VectorXd& get(const std::string& name) const;

  /// FNV-1a over section names and raw parameter bytes, in section order.
  uint64_t hash() const;
  /// hash() rendered as fixed-width hex, the form reports embed.
  std::string hash_hex() const;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

}  // namespace residrl
