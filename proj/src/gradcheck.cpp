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

#include "ufo2/gradcheck.h"

#include <algorithm>
#include <cmath>

namespace ufo2 {

GradCheckReport grad_check(const std::function<Tensor<double>()>& program,
                           const std::vector<NamedParam>& params, double step,
                           std::size_t max_samples, double floor) {
  std::vector<Matrix<double>> analytic;
  {
    for (const auto& p : params) {
      Tensor<double> t = p.tensor;
      t.zero_grad();
    }
    Graph<double> graph;
    Tensor<double> loss = program();
    graph.backward(loss);
    for (const auto& p : params) analytic.push_back(p.tensor.grad());
  }

  // (param, coordinate) pairs to probe.
  std::vector<std::pair<std::size_t, Index>> coords;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (Index j = 0; j < params[i].tensor.size(); ++j) coords.emplace_back(i, j);
  }
  if (max_samples > 0 && coords.size() > max_samples) {
    std::vector<std::pair<std::size_t, Index>> picked;
    const double stride = static_cast<double>(coords.size()) / max_samples;
    for (std::size_t s = 0; s < max_samples; ++s) {
      picked.push_back(coords[static_cast<std::size_t>(s * stride + stride / 2)]);
    }
    coords.swap(picked);
  }

  GradCheckReport report;
  NoGradGuard<double> no_grad;
  for (const auto& [pi, j] : coords) {
    Tensor<double> t = params[pi].tensor;
    Matrix<double> base = t.value();
    Matrix<double> shifted = base;
    shifted.data()[j] = base.data()[j] + step;
    t.set_value(shifted);
    const double up = program().item();
    shifted.data()[j] = base.data()[j] - step;
    t.set_value(shifted);
    const double down = program().item();
    t.set_value(base);

    GradCheckEntry e;
    e.name = params[pi].name;
    e.index = j;
    e.analytic = analytic[pi].data()[j];
    e.numeric = (up - down) / (2 * step);
    const double denom =
        std::max({std::abs(e.analytic), std::abs(e.numeric), floor});
    e.rel_error = std::abs(e.analytic - e.numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(e);
  }
  return report;
}

}  // namespace ufo2
