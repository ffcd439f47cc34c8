// Copyright (c) 2026 The ufo2 Authors. All Rights Reserved.
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

#ifndef UFO2_GRADCHECK_SUITE_H_
#define UFO2_GRADCHECK_SUITE_H_

#include <cstdint>
#include <string>
#include <vector>

namespace ufo2 {

struct SuiteResult {
  std::string name;
  double max_rel_error = 0;
  double threshold = 0;
  bool passed() const { return max_rel_error < threshold; }
};

constexpr double kSmoothThreshold = 1e-6;
constexpr double kDefaultThreshold = 1e-4;

// Finite-difference checks of every op and both full losses at toy sizes,
// in 64-bit.
std::vector<SuiteResult> run_gradcheck_suite(std::uint64_t seed = 7);

}  // namespace ufo2

#endif  // UFO2_GRADCHECK_SUITE_H_
