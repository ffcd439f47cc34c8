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

#ifndef UFO2_OPS_H_
#define UFO2_OPS_H_

#include <optional>
#include <vector>

#include "ufo2/tensor.h"

namespace ufo2 {

class Rng;

// Elementwise and linear algebra. Broadcasting is limited to a [1 x n] row
// added to every row (add_bias) and scalar scaling.

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

// a * b^T without materializing the transpose.
template <typename Scalar>
Tensor<Scalar> matmul_transposed(const Tensor<Scalar>& a,
                                 const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> cwise_product(const Tensor<Scalar>& a, const Tensor<Scalar>& b);

template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& row);

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor);

// x * w + b, the dense layer used everywhere.
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                      const Tensor<Scalar>& b) {
  return add_bias(matmul(x, w), b);
}

template <typename Scalar>
Tensor<Scalar> operator+(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return add(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator-(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return sub(a, b);
}
template <typename Scalar>
Tensor<Scalar> operator*(Scalar s, const Tensor<Scalar>& x) {
  return scale(x, s);
}

// Reductions.
template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x);

// Column means, [rows x n] -> [1 x n].
template <typename Scalar>
Tensor<Scalar> mean_rows(const Tensor<Scalar>& x);

// Weighted sum of scalars, sum_i w_i * x_i.
template <typename Scalar>
Tensor<Scalar> weighted_sum(const std::vector<Tensor<Scalar>>& terms,
                            const std::vector<Scalar>& weights);

// Indexing.
template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count);

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& x, Index start, Index count);

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts);

// Row lookup; repeated indices accumulate gradient.
template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x,
                           const std::vector<Index>& indices);

// out(r, j) = x(r, indices[r][j]).
template <typename Scalar>
Tensor<Scalar> take_per_row(const Tensor<Scalar>& x,
                            const std::vector<std::vector<Index>>& indices);

// Rows flagged in `mask` are replaced by `row` ([1 x d]).
template <typename Scalar>
Tensor<Scalar> replace_rows(const Tensor<Scalar>& x,
                            const std::vector<bool>& mask,
                            const Tensor<Scalar>& row);

// Nonlinearities.
template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> swish(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x);

// Splits the last axis into halves (a, b) and returns a * sigmoid(b).
template <typename Scalar>
Tensor<Scalar> glu(const Tensor<Scalar>& x);

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& x);

// log(x + offset).
template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x, Scalar offset = Scalar(0));

template <typename Scalar>
Tensor<Scalar> stop_gradient(const Tensor<Scalar>& x);

// Inverted dropout. Identity when rate == 0.
template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, Scalar rate, Rng& rng);

// Normalization.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& shift,
                          Scalar eps = Scalar(1e-5));

// Divides every row by max(||row||, eps).
template <typename Scalar>
Tensor<Scalar> l2_normalize_rows(const Tensor<Scalar>& x,
                                 Scalar eps = Scalar(1e-8));

// Softmax family, row-wise over the last axis.
//
// masked_softmax adds the (unlearnable) bias to the logits; -inf entries in
// the bias receive exactly zero weight and zero gradient.
template <typename Scalar>
Tensor<Scalar> masked_softmax(const Tensor<Scalar>& logits,
                              const Matrix<Scalar>& bias);

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits);

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& logits);

// Softmax over `groups` contiguous column blocks of each row.
template <typename Scalar>
Tensor<Scalar> grouped_softmax(const Tensor<Scalar>& logits, Index groups,
                               Scalar temperature = Scalar(1));

// Straight-through Gumbel-softmax. The forward value is one-hot per group at
// argmax((logits + noise) / temperature); the backward pass differentiates
// softmax((logits + noise) / temperature).
template <typename Scalar>
Tensor<Scalar> gumbel_softmax_st(const Tensor<Scalar>& logits, Index groups,
                                 Scalar temperature,
                                 const Matrix<Scalar>* noise = nullptr);

// Convolutions over time.
enum class ConvAlignment { kCentered, kCausal };

// validity[t] is the last input frame output t may read; later frames are
// treated as zero padding.
using Validity = std::vector<Index>;

// x: [T x d_in], kernel: [k * d_in x d_out] with row (tap * d_in + channel).
template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                      const Validity& validity,
                      ConvAlignment alignment = ConvAlignment::kCentered);

// x: [T x d], kernel: [k x d].
template <typename Scalar>
Tensor<Scalar> depthwise_conv1d(
    const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
    const Validity& validity,
    ConvAlignment alignment = ConvAlignment::kCentered);

// 3x3, stride 2, unpadded 2-D convolution over (time x frequency).
// x: [T x (in_channels * F)], channel-major columns. kernel:
// [(in_channels * 9) x out_channels], bias: [1 x out_channels].
// Result: [T' x (out_channels * F')].
template <typename Scalar>
Tensor<Scalar> conv2d_stride2(const Tensor<Scalar>& x,
                              const Tensor<Scalar>& kernel,
                              const Tensor<Scalar>& bias, Index in_channels);

inline Index stride2_length(Index n) { return (n - 3) / 2 + 1; }

}  // namespace ufo2

#endif  // UFO2_OPS_H_
