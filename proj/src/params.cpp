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

#include "ufo2/params.h"

#include <cmath>

#include "ufo2/rng.h"

namespace ufo2 {

template <typename Scalar>
Tensor<Scalar> ParamStore<Scalar>::add(const std::string& name,
                                       Matrix<Scalar> init) {
  UFO2_CHECK(!contains(name), ErrorKind::kConfiguration,
             "duplicate parameter name " + name);
  Tensor<Scalar> t = Tensor<Scalar>::parameter(std::move(init));
  params_.emplace(name, t);
  return t;
}

template <typename Scalar>
Tensor<Scalar> ParamStore<Scalar>::get(const std::string& name) const {
  auto it = params_.find(name);
  UFO2_CHECK(it != params_.end(), ErrorKind::kMissingHead,
             "parameter " + name + " is not in the store");
  return it->second;
}

template <typename Scalar>
void ParamStore<Scalar>::erase_prefix(const std::string& prefix) {
  for (auto it = params_.begin(); it != params_.end();) {
    if (it->first.rfind(prefix, 0) == 0) {
      it = params_.erase(it);
    } else {
      ++it;
    }
  }
}

template <typename Scalar>
std::vector<std::string> ParamStore<Scalar>::names(const std::string& prefix) const {
  std::vector<std::string> out;
  for (const auto& [name, t] : params_) {
    if (name.rfind(prefix, 0) == 0) out.push_back(name);
  }
  return out;
}

template <typename Scalar>
Index ParamStore<Scalar>::parameter_count() const {
  Index n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

template <typename Scalar>
void ParamStore<Scalar>::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

template <typename Scalar>
Matrix<Scalar> glorot_uniform(Index rows, Index cols, Index fan_in,
                              Index fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Matrix<Scalar> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<Scalar>((2 * rng.uniform() - 1) * limit);
  }
  return m;
}

template <typename Scalar>
void add_linear(ParamStore<Scalar>& store, const std::string& name, Index in,
                Index out, Rng& rng) {
  store.add(name + ".w", glorot_uniform<Scalar>(in, out, in, out, rng));
  store.add(name + ".b", Matrix<Scalar>::Zero(1, out));
}

template <typename Scalar>
void add_layer_norm(ParamStore<Scalar>& store, const std::string& name, Index d) {
  store.add(name + ".gain", Matrix<Scalar>::Ones(1, d));
  store.add(name + ".shift", Matrix<Scalar>::Zero(1, d));
}

template class ParamStore<float>;
template class ParamStore<double>;
template void add_linear(ParamStore<float>&, const std::string&, Index, Index, Rng&);
template void add_linear(ParamStore<double>&, const std::string&, Index, Index, Rng&);
template void add_layer_norm(ParamStore<float>&, const std::string&, Index);
template void add_layer_norm(ParamStore<double>&, const std::string&, Index);
template Matrix<float> glorot_uniform(Index, Index, Index, Index, Rng&);
template Matrix<double> glorot_uniform(Index, Index, Index, Index, Rng&);

}  // namespace ufo2
