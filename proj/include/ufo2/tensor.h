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

#ifndef UFO2_TENSOR_H_
#define UFO2_TENSOR_H_

#include <Eigen/Dense>

#include <array>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ufo2/error.h"

namespace ufo2 {

using Index = Eigen::Index;

template <typename Scalar>
using Matrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

template <typename Scalar>
class Graph;

namespace detail {

template <typename Scalar>
struct Node {
  Matrix<Scalar> value;
  Matrix<Scalar> grad;  // empty until the first contribution arrives
  bool requires_grad = false;
  std::function<void(const Matrix<Scalar>&)> backward;
};

}  // namespace detail

// A dense 2-D array that participates in reverse-mode differentiation.
//
// Tensor is a cheap handle: copies share the same node. Values are never
// modified by operations; only the trainer writes into parameter leaves
// through set_value().
template <typename Scalar>
class Tensor {
 public:
  using Node = detail::Node<Scalar>;

  Tensor() = default;
  explicit Tensor(Matrix<Scalar> value, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
  }

  static Tensor parameter(Matrix<Scalar> value) {
    return Tensor(std::move(value), true);
  }
  static Tensor scalar(Scalar v) {
    Matrix<Scalar> m(1, 1);
    m(0, 0) = v;
    return Tensor(std::move(m));
  }

  bool defined() const { return node_ != nullptr; }
  const Matrix<Scalar>& value() const { return node_->value; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  std::array<Index, 2> shape() const { return {rows(), cols()}; }
  std::string shape_string() const;
  Scalar item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && node_->grad.size() != 0; }
  // Zero-filled view when no gradient has reached this tensor.
  Matrix<Scalar> grad() const;
  void zero_grad() { node_->grad.resize(0, 0); }

  void set_value(Matrix<Scalar> value);
  void add_grad(const Matrix<Scalar>& g) const;

  // Installs the backward closure and records this tensor on the active
  // graph. Called by operation implementations only.
  void set_backward(std::function<void(const Matrix<Scalar>&)> fn) const;

  const Node* node() const { return node_.get(); }
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

 private:
  friend class Graph<Scalar>;
  std::shared_ptr<Node> node_;
};

// Records the operations executed while it is alive on the current thread.
// Exactly one backward pass is allowed; afterwards the recording is dropped.
template <typename Scalar>
class Graph {
 public:
  Graph();
  ~Graph();
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  void backward(const Tensor<Scalar>& root);
  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  static Graph* current();
  void record(std::shared_ptr<detail::Node<Scalar>> node);

 private:
  std::vector<std::shared_ptr<detail::Node<Scalar>>> nodes_;
  Graph* previous_ = nullptr;
  bool consumed_ = false;
};

// True when a graph is active and at least one input needs a gradient.
template <typename Scalar, typename... Ts>
bool should_record(const Tensor<Scalar>& first, const Ts&... rest) {
  if (Graph<Scalar>::current() == nullptr) return false;
  return (first.requires_grad() || ... || rest.requires_grad());
}

// Runs the body with recording disabled (inference).
template <typename Scalar>
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Graph<Scalar>* saved_;
};

template <typename Scalar>
void backward(Graph<Scalar>& graph, const Tensor<Scalar>& root) {
  graph.backward(root);
}

}  // namespace ufo2

#endif  // UFO2_TENSOR_H_
