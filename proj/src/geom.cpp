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

#include "residrl/geom.hpp"

#include <algorithm>
#include <stdexcept>

namespace residrl {

ActionDelta clamp_action(double dx, double dy, double dtheta) {
  if (!std::isfinite(dx) || !std::isfinite(dy) || !std::isfinite(dtheta)) {
    throw std::domain_error("clamp_action: non-finite action component");
  }
  auto clamp1 = [](double v) { return std::clamp(v, -1.0, 1.0); };
  return ActionDelta{clamp1(dx), clamp1(dy), clamp1(dtheta)};
}

}  // namespace residrl
