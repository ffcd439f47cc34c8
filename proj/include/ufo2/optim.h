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

#ifndef UFO2_OPTIM_H_
#define UFO2_OPTIM_H_

#include <functional>
#include <map>
#include <string>

#include "ufo2/params.h"

namespace ufo2 {

// base * min(step^-0.5, step * warmup^-1.5), step >= 1.
double noam_lr(Index step, double base_lr, Index warmup);

// Global L2 norm of all gradients, accumulated in double in name order.
// A non-finite gradient is a divergence error naming the parameter.
template <typename Scalar>
double global_grad_norm(const ParamStore<Scalar>& store);

// Factor that brings `norm` down to `max_norm`, or 1.
double clip_factor(double norm, double max_norm);

template <typename Scalar>
class Adam {
 public:
  explicit Adam(double beta1 = 0.9, double beta2 = 0.98, double eps = 1e-9)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // One update with bias correction for step number `step` (>= 1); every
  // gradient is multiplied by grad_scale first. Parameters for which
  // `frozen` returns true are left untouched (their moments too).
  void step(ParamStore<Scalar>& store, double lr, Index step, double grad_scale = 1.0,
            const std::function<bool(const std::string&)>& frozen = {});

  std::map<std::string, Matrix<Scalar>>& first_moments() { return m_; }
  std::map<std::string, Matrix<Scalar>>& second_moments() { return v_; }
  const std::map<std::string, Matrix<Scalar>>& first_moments() const { return m_; }
  const std::map<std::string, Matrix<Scalar>>& second_moments() const { return v_; }

 private:
  double beta1_, beta2_, eps_;
  std::map<std::string, Matrix<Scalar>> m_, v_;
};

}  // namespace ufo2

#endif  // UFO2_OPTIM_H_
