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

#include "ufo2/tensor.h"

#include <sstream>

namespace ufo2 {

namespace {

template <typename Scalar>
Graph<Scalar>*& current_slot() {
  thread_local Graph<Scalar>* slot = nullptr;
  return slot;
}

}  // namespace

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDimension: return "dimension error";
    case ErrorKind::kInvalidMask: return "invalid mask";
    case ErrorKind::kConfiguration: return "configuration error";
    case ErrorKind::kLength: return "length error";
    case ErrorKind::kFormat: return "format error";
    case ErrorKind::kLoad: return "load error";
    case ErrorKind::kInfeasibleAlignment: return "infeasible alignment";
    case ErrorKind::kUndefinedMetric: return "undefined metric";
    case ErrorKind::kNumericalDegeneracy: return "numerical degeneracy";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kIncompatible: return "incompatible checkpoint";
    case ErrorKind::kMissingHead: return "missing head";
    case ErrorKind::kAlignment: return "alignment error";
    case ErrorKind::kGraph: return "graph error";
  }
  return "error";
}

template <typename Scalar>
std::string Tensor<Scalar>::shape_string() const {
  std::ostringstream os;
  os << "[" << rows() << "x" << cols() << "]";
  return os.str();
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  UFO2_CHECK(size() == 1, ErrorKind::kDimension,
             "item() on non-scalar tensor " + shape_string());
  return node_->value(0, 0);
}

template <typename Scalar>
Matrix<Scalar> Tensor<Scalar>::grad() const {
  if (has_grad()) return node_->grad;
  return Matrix<Scalar>::Zero(rows(), cols());
}

template <typename Scalar>
void Tensor<Scalar>::set_value(Matrix<Scalar> value) {
  UFO2_CHECK(value.rows() == rows() && value.cols() == cols(),
             ErrorKind::kDimension, "set_value shape mismatch");
  node_->value = std::move(value);
}

template <typename Scalar>
void Tensor<Scalar>::add_grad(const Matrix<Scalar>& g) const {
  if (!node_->requires_grad) return;
  if (node_->grad.size() == 0) {
    node_->grad = g;
  } else {
    node_->grad += g;
  }
}

template <typename Scalar>
void Tensor<Scalar>::set_backward(
    std::function<void(const Matrix<Scalar>&)> fn) const {
  Graph<Scalar>* graph = Graph<Scalar>::current();
  if (graph == nullptr) return;
  node_->requires_grad = true;
  node_->backward = std::move(fn);
  graph->record(node_);
}

template <typename Scalar>
Graph<Scalar>::Graph() : previous_(current_slot<Scalar>()) {
  current_slot<Scalar>() = this;
}

template <typename Scalar>
Graph<Scalar>::~Graph() {
  current_slot<Scalar>() = previous_;
}

template <typename Scalar>
Graph<Scalar>* Graph<Scalar>::current() {
  return current_slot<Scalar>();
}

template <typename Scalar>
void Graph<Scalar>::record(std::shared_ptr<detail::Node<Scalar>> node) {
  nodes_.push_back(std::move(node));
}

template <typename Scalar>
void Graph<Scalar>::backward(const Tensor<Scalar>& root) {
  UFO2_CHECK(!consumed_, ErrorKind::kGraph,
             "backward called twice on the same graph");
  UFO2_CHECK(root.defined() && root.size() == 1, ErrorKind::kGraph,
             "backward root must be a scalar");
  UFO2_CHECK(root.requires_grad(), ErrorKind::kGraph,
             "backward root does not depend on any parameter");
  consumed_ = true;
  root.add_grad(Matrix<Scalar>::Ones(1, 1));
  // Recording order is a topological order, so its reverse visits every
  // node after all of its consumers.
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    detail::Node<Scalar>& node = **it;
    if (node.grad.size() != 0 && node.backward) node.backward(node.grad);
    node.backward = nullptr;
    node.grad.resize(0, 0);
  }
  nodes_.clear();
}

template <typename Scalar>
NoGradGuard<Scalar>::NoGradGuard() : saved_(current_slot<Scalar>()) {
  current_slot<Scalar>() = nullptr;
}

template <typename Scalar>
NoGradGuard<Scalar>::~NoGradGuard() {
  current_slot<Scalar>() = saved_;
}

template class Tensor<float>;
template class Tensor<double>;
template class Graph<float>;
template class Graph<double>;
template class NoGradGuard<float>;
template class NoGradGuard<double>;

}  // namespace ufo2
