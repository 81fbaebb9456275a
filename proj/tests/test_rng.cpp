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

#include <cmath>
#include <vector>

#include "doctest.h"
#include "residrl/rng.hpp"

using residrl::Rng;

TEST_CASE("identical seeds produce identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge immediately") {
  Rng a(1), b(2);
  int equal = 0;
  for (int i = 0; i < 64; ++i) equal += (a.next_u64() == b.next_u64());
  CHECK(equal == 0);
}

TEST_CASE("split streams are independent of parent consumption") {
  Rng parent(7);
  Rng child_before = parent.split(3);
  parent.next_u64();
  parent.next_u64();
  Rng child_after = parent.split(3);
  // split derives from the seed, not the current stream position
  CHECK(child_before.next_u64() == child_after.next_u64());

  Rng other = parent.split(4);
  CHECK(parent.split(3).next_u64() != other.next_u64());
}

TEST_CASE("uniform stays in [0,1) and fills the range") {
  Rng r(123);
  double lo = 1.0, hi = 0.0;
  for (int i = 0; i < 100000; ++i) {
    double u = r.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    lo = std::min(lo, u);
    hi = std::max(hi, u);
  }
  CHECK(lo < 0.01);
  CHECK(hi > 0.99);
}

TEST_CASE("bounded uniform respects half-width bounds") {
  Rng r(55);
  for (int i = 0; i < 10000; ++i) {
    double u = r.uniform(-1.0, 1.0);
    CHECK(u >= -1.0);
    CHECK(u <= 1.0);
  }
  CHECK(r.uniform(5.0, 5.0) == 5.0);
}

TEST_CASE("uniform_index covers all buckets without bias blowup") {
  Rng r(99);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[r.uniform_index(7)];
  for (int c : counts) {
    CHECK(c > 9000);
    CHECK(c < 11000);
  }
}

TEST_CASE("normal moments match a standard Gaussian") {
  Rng r(2024);
  const int n = 200000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = r.normal();
    sum += z;
    sumsq += z * z;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  // SE of the mean is 1/sqrt(n) ~ 0.0022; allow 4 sigma
  CHECK(std::abs(mean) < 0.01);
  CHECK(var > 0.98);
  CHECK(var < 1.02);
}

TEST_CASE("scaled normal applies mean and std") {
  Rng r(31);
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    double z = r.normal(3.0, 0.5);
    sum += z;
    sumsq += z * z;
  }
  double mean = sum / n;
  double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean - 3.0) < 0.01);
  CHECK(std::abs(var - 0.25) < 0.01);
}
