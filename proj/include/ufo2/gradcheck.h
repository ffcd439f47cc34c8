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

#ifndef UFO2_GRADCHECK_H_
#define UFO2_GRADCHECK_H_

#include <functional>
#include <string>
#include <vector>

#include "ufo2/tensor.h"

namespace ufo2 {

struct GradCheckEntry {
  std::string name;
  Index index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::vector<GradCheckEntry> entries;
};

struct NamedParam {
  std::string name;
  Tensor<double> tensor;
};

// Compares the analytic gradient of a scalar program against central
// differences. The program is re-run for every perturbed coordinate, so it
// must be deterministic. relative error = |a - n| / max(|a|, |n|, floor).
//
// When max_samples > 0 only that many coordinates, spread over all
// parameters by a fixed stride walk, are checked.
GradCheckReport grad_check(const std::function<Tensor<double>()>& program,
                           const std::vector<NamedParam>& params,
                           double step = 1e-5, std::size_t max_samples = 0,
                           double floor = 1e-3);

}  // namespace ufo2

#endif  // UFO2_GRADCHECK_H_
