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

#ifndef UFO2_ENCODER_H_
#define UFO2_ENCODER_H_

#include <string>
#include <vector>

#include "ufo2/chunking.h"
#include "ufo2/ops.h"
#include "ufo2/params.h"

namespace ufo2 {

class Rng;

enum class ConvMode { kChunkedNonCausal, kCausal };

ConvMode parse_conv_mode(const std::string& text);
const char* to_string(ConvMode mode);

struct EncoderConfig {
  Index feature_dim = 80;
  Index d_model = 32;
  Index heads = 4;
  Index blocks = 2;
  Index kernel = 5;
  Index ff_expansion = 4;
  Index subsample_channels = 16;
  double dropout = 0.1;
  ConvMode conv_mode = ConvMode::kChunkedNonCausal;

  void validate() const;
  // Number of encoder frames produced from `frames` feature frames.
  Index output_length(Index frames) const;
  // Smallest feature length the two stride-2 convolutions accept.
  static constexpr Index kMinFrames = 7;
};

template <typename Scalar>
struct AttentionParams {
  LinearParams<Scalar> q, k, v, out;
  static AttentionParams bind(const ParamStore<Scalar>& store, const std::string& name);
};

template <typename Scalar>
void add_attention(ParamStore<Scalar>& store, const std::string& name, Index d,
                   Rng& rng);

// Multi-head scaled dot-product attention. Per head,
// weights = masked_softmax(Q K^T / sqrt(d / heads) + bias); heads are
// concatenated and projected.
template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& query,
                                    const Tensor<Scalar>& memory,
                                    const AttentionParams<Scalar>& params,
                                    Index heads, const Matrix<Scalar>& bias);

// Fixed sinusoidal table [length x d].
template <typename Scalar>
Matrix<Scalar> sinusoidal_encoding(Index length, Index d);

template <typename Scalar>
struct EncodedPair {
  Tensor<Scalar> features;  // subsampled, unmasked (quantizer input)
  Tensor<Scalar> offline;
  Tensor<Scalar> online;
  Index length = 0;
};

template <typename Scalar>
struct MaskInput {
  const SslMask* mask = nullptr;
  Tensor<Scalar> embedding;  // [1 x d_model]
};

// Conv subsampling followed by a stack of Conformer blocks. Both modes are
// evaluated with the same parameter handles.
template <typename Scalar>
class Encoder {
 public:
  static void init_params(const EncoderConfig& config, ParamStore<Scalar>& store,
                          Rng& rng);

  Encoder(const EncoderConfig& config, const ParamStore<Scalar>& store);

  const EncoderConfig& config() const { return config_; }

  // [T x feature_dim] -> [T' x d_model].
  Tensor<Scalar> subsample(const Tensor<Scalar>& features) const;
  Tensor<Scalar> positional_encode(const Tensor<Scalar>& x) const;
  Tensor<Scalar> conformer_block(const Tensor<Scalar>& x, const ChunkSpec& spec,
                                 Index block, Rng* dropout_rng) const;
  // positional encoding + every block, under one chunk spec.
  Tensor<Scalar> context(const Tensor<Scalar>& subsampled, const ChunkSpec& spec,
                         Rng* dropout_rng) const;

  // Subsamples once, optionally masks, then runs the block stack offline and
  // under `online`. A null dropout_rng disables dropout.
  EncodedPair<Scalar> encode(const Tensor<Scalar>& features,
                             const ChunkSpec& online,
                             const MaskInput<Scalar>* mask = nullptr,
                             Rng* dropout_rng = nullptr) const;

  // One mode only, for decoding.
  Tensor<Scalar> encode_single(const Tensor<Scalar>& features,
                               const ChunkSpec& spec) const;

 private:
  struct Block {
    NormParams<Scalar> ff1_norm, mhsa_norm, conv_norm, ff2_norm, final_norm;
    LinearParams<Scalar> ff1_in, ff1_out, ff2_in, ff2_out;
    AttentionParams<Scalar> mhsa;
    LinearParams<Scalar> pointwise_in, pointwise_out;
    Tensor<Scalar> depthwise_kernel, depthwise_bias;
    NormParams<Scalar> depthwise_norm;
  };

  Tensor<Scalar> feed_forward(const Tensor<Scalar>& x, const LinearParams<Scalar>& in,
                              const LinearParams<Scalar>& out, Rng* dropout_rng) const;
  Tensor<Scalar> conv_module(const Tensor<Scalar>& x, const Block& block,
                             const ChunkSpec& spec) const;

  EncoderConfig config_;
  Tensor<Scalar> conv1_kernel_, conv1_bias_, conv2_kernel_, conv2_bias_;
  LinearParams<Scalar> subsample_out_;
  std::vector<Block> blocks_;
};

}  // namespace ufo2

#endif  // UFO2_ENCODER_H_
