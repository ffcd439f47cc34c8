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

#ifndef UFO2_PARAMS_H_
#define UFO2_PARAMS_H_

#include <map>
#include <string>
#include <vector>

#include "ufo2/tensor.h"

namespace ufo2 {

class Rng;

// The single shared parameter store. Names are dotted paths
// ("encoder.blocks.0.mhsa.q.w"); iteration order is lexicographic, which
// fixes the order of every reduction over parameters.
template <typename Scalar>
class ParamStore {
 public:
  Tensor<Scalar> add(const std::string& name, Matrix<Scalar> init);
  Tensor<Scalar> get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  void erase_prefix(const std::string& prefix);
  std::vector<std::string> names(const std::string& prefix = "") const;

  const std::map<std::string, Tensor<Scalar>>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }
  Index parameter_count() const;
  void zero_grad();

 private:
  std::map<std::string, Tensor<Scalar>> params_;
};

// Glorot-uniform weight [in x out] plus zero bias [1 x out], as name.w/name.b.
template <typename Scalar>
void add_linear(ParamStore<Scalar>& store, const std::string& name, Index in,
                Index out, Rng& rng);

template <typename Scalar>
void add_layer_norm(ParamStore<Scalar>& store, const std::string& name, Index d);

template <typename Scalar>
Matrix<Scalar> glorot_uniform(Index rows, Index cols, Index fan_in,
                              Index fan_out, Rng& rng);

// Handles for a dense layer bound from a store.
template <typename Scalar>
struct LinearParams {
  Tensor<Scalar> w, b;
  static LinearParams bind(const ParamStore<Scalar>& store, const std::string& name) {
    return {store.get(name + ".w"), store.get(name + ".b")};
  }
};

template <typename Scalar>
struct NormParams {
  Tensor<Scalar> gain, shift;
  static NormParams bind(const ParamStore<Scalar>& store, const std::string& name) {
    return {store.get(name + ".gain"), store.get(name + ".shift")};
  }
};

}  // namespace ufo2

#endif  // UFO2_PARAMS_H_
