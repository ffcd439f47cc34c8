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

#include "ufo2/optim.h"

#include <cmath>

namespace ufo2 {

double noam_lr(Index step, double base_lr, Index warmup) {
  UFO2_CHECK(step >= 1 && warmup >= 1, ErrorKind::kConfiguration,
             "learning-rate schedule needs step >= 1 and warmup >= 1");
  const auto s = static_cast<double>(step);
  return base_lr * std::min(std::pow(s, -0.5), s * std::pow(static_cast<double>(warmup), -1.5));
}

template <typename Scalar>
double global_grad_norm(const ParamStore<Scalar>& store) {
  double sq = 0;
  for (const auto& [name, p] : store.all()) {
    if (!p.has_grad()) continue;
    const double n = p.grad().template cast<double>().squaredNorm();
    UFO2_CHECK(std::isfinite(n), ErrorKind::kDivergence, "non-finite gradient in " + name);
    sq += n;
  }
  return std::sqrt(sq);
}

double clip_factor(double norm, double max_norm) {
  return norm > max_norm ? max_norm / norm : 1.0;
}

template <typename Scalar>
void Adam<Scalar>::step(ParamStore<Scalar>& store, double lr, Index step, double grad_scale,
                        const std::function<bool(const std::string&)>& frozen) {
  UFO2_CHECK(step >= 1, ErrorKind::kConfiguration, "Adam step must be >= 1");
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step));
  const auto b1 = static_cast<Scalar>(beta1_);
  const auto b2 = static_cast<Scalar>(beta2_);
  for (const auto& [name, p] : store.all()) {
    if (frozen && frozen(name)) continue;
    auto& m = m_[name];
    auto& v = v_[name];
    if (m.size() == 0) {
      m = Matrix<Scalar>::Zero(p.rows(), p.cols());
      v = Matrix<Scalar>::Zero(p.rows(), p.cols());
    }
    const Matrix<Scalar> g = p.grad() * static_cast<Scalar>(grad_scale);
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    const Matrix<Scalar> m_hat = m / static_cast<Scalar>(c1);
    const Matrix<Scalar> v_hat = v / static_cast<Scalar>(c2);
    Matrix<Scalar> update =
        (m_hat.array() / (v_hat.array().sqrt() + static_cast<Scalar>(eps_))).matrix();
    Tensor<Scalar> handle = p;
    handle.set_value(p.value() - static_cast<Scalar>(lr) * update);
  }
}

template double global_grad_norm(const ParamStore<float>&);
template double global_grad_norm(const ParamStore<double>&);
template class Adam<float>;
template class Adam<double>;

}  // namespace ufo2
