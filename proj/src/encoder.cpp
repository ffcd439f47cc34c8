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

#include "ufo2/encoder.h"

#include <cmath>

#include "ufo2/rng.h"

namespace ufo2 {

ConvMode parse_conv_mode(const std::string& text) {
  if (text == "chunked_non_causal") return ConvMode::kChunkedNonCausal;
  if (text == "causal") return ConvMode::kCausal;
  throw Error(ErrorKind::kConfiguration,
              "conv_mode must be chunked_non_causal or causal, got '" + text + "'");
}

const char* to_string(ConvMode mode) {
  return mode == ConvMode::kCausal ? "causal" : "chunked_non_causal";
}

void EncoderConfig::validate() const {
  UFO2_CHECK(d_model >= 1 && heads >= 1 && d_model % heads == 0,
             ErrorKind::kConfiguration, "d_model must be divisible by heads");
  UFO2_CHECK(kernel >= 1 && kernel % 2 == 1, ErrorKind::kConfiguration,
             "encoder conv kernel must be odd");
  UFO2_CHECK(blocks >= 1 && ff_expansion >= 1 && subsample_channels >= 1,
             ErrorKind::kConfiguration, "encoder sizes must be positive");
  UFO2_CHECK(feature_dim >= EncoderConfig::kMinFrames, ErrorKind::kConfiguration,
             "feature_dim too small for subsampling");
  UFO2_CHECK(dropout >= 0 && dropout < 1, ErrorKind::kConfiguration,
             "dropout must be in [0, 1)");
}

Index EncoderConfig::output_length(Index frames) const {
  UFO2_CHECK(frames >= kMinFrames, ErrorKind::kLength,
             "need at least " + std::to_string(kMinFrames) +
                 " feature frames for two stride-2 convolutions, got " +
                 std::to_string(frames));
  return stride2_length(stride2_length(frames));
}

template <typename Scalar>
AttentionParams<Scalar> AttentionParams<Scalar>::bind(const ParamStore<Scalar>& store,
                                                      const std::string& name) {
  return {LinearParams<Scalar>::bind(store, name + ".q"),
          LinearParams<Scalar>::bind(store, name + ".k"),
          LinearParams<Scalar>::bind(store, name + ".v"),
          LinearParams<Scalar>::bind(store, name + ".out")};
}

template <typename Scalar>
void add_attention(ParamStore<Scalar>& store, const std::string& name, Index d,
                   Rng& rng) {
  for (const char* part : {".q", ".k", ".v", ".out"}) {
    add_linear(store, name + part, d, d, rng);
  }
}

template <typename Scalar>
Tensor<Scalar> multi_head_attention(const Tensor<Scalar>& query,
                                    const Tensor<Scalar>& memory,
                                    const AttentionParams<Scalar>& p,
                                    Index heads, const Matrix<Scalar>& bias) {
  const Index d = query.cols();
  const Index dk = d / heads;
  Tensor<Scalar> q = linear(query, p.q.w, p.q.b);
  Tensor<Scalar> k = linear(memory, p.k.w, p.k.b);
  Tensor<Scalar> v = linear(memory, p.v.w, p.v.b);
  const Scalar inv_sqrt = Scalar(1) / std::sqrt(static_cast<Scalar>(dk));
  std::vector<Tensor<Scalar>> outputs;
  outputs.reserve(heads);
  for (Index h = 0; h < heads; ++h) {
    Tensor<Scalar> qh = slice_cols(q, h * dk, dk);
    Tensor<Scalar> kh = slice_cols(k, h * dk, dk);
    Tensor<Scalar> vh = slice_cols(v, h * dk, dk);
    Tensor<Scalar> weights =
        masked_softmax(scale(matmul_transposed(qh, kh), inv_sqrt), bias);
    outputs.push_back(matmul(weights, vh));
  }
  Tensor<Scalar> merged = heads == 1 ? outputs[0] : concat_cols(outputs);
  return linear(merged, p.out.w, p.out.b);
}

template <typename Scalar>
Matrix<Scalar> sinusoidal_encoding(Index length, Index d) {
  Matrix<Scalar> pe(length, d);
  for (Index pos = 0; pos < length; ++pos) {
    for (Index i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
      const double angle = pos * rate;
      pe(pos, i) = static_cast<Scalar>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return pe;
}

template <typename Scalar>
void Encoder<Scalar>::init_params(const EncoderConfig& c, ParamStore<Scalar>& store,
                                  Rng& rng) {
  c.validate();
  const Index ch = c.subsample_channels;
  const Index f2 = stride2_length(stride2_length(c.feature_dim));
  store.add("encoder.subsample.conv1.kernel", glorot_uniform<Scalar>(9, ch, 9, 9 * ch, rng));
  store.add("encoder.subsample.conv1.bias", Matrix<Scalar>::Zero(1, ch));
  store.add("encoder.subsample.conv2.kernel",
            glorot_uniform<Scalar>(9 * ch, ch, 9 * ch, 9 * ch, rng));
  store.add("encoder.subsample.conv2.bias", Matrix<Scalar>::Zero(1, ch));
  add_linear(store, "encoder.subsample.out", ch * f2, c.d_model, rng);

  const Index d = c.d_model;
  const Index ff = d * c.ff_expansion;
  for (Index b = 0; b < c.blocks; ++b) {
    const std::string n = "encoder.blocks." + std::to_string(b);
    add_layer_norm(store, n + ".ff1.norm", d);
    add_linear(store, n + ".ff1.in", d, ff, rng);
    add_linear(store, n + ".ff1.out", ff, d, rng);
    add_layer_norm(store, n + ".mhsa.norm", d);
    add_attention(store, n + ".mhsa", d, rng);
    add_layer_norm(store, n + ".conv.norm", d);
    add_linear(store, n + ".conv.pointwise_in", d, 2 * d, rng);
    store.add(n + ".conv.depthwise.kernel",
              glorot_uniform<Scalar>(c.kernel, d, c.kernel, c.kernel, rng));
    store.add(n + ".conv.depthwise.bias", Matrix<Scalar>::Zero(1, d));
    add_layer_norm(store, n + ".conv.depthwise_norm", d);
    add_linear(store, n + ".conv.pointwise_out", d, d, rng);
    add_layer_norm(store, n + ".ff2.norm", d);
    add_linear(store, n + ".ff2.in", d, ff, rng);
    add_linear(store, n + ".ff2.out", ff, d, rng);
    add_layer_norm(store, n + ".final_norm", d);
  }
}

template <typename Scalar>
Encoder<Scalar>::Encoder(const EncoderConfig& config, const ParamStore<Scalar>& store)
    : config_(config) {
  config_.validate();
  conv1_kernel_ = store.get("encoder.subsample.conv1.kernel");
  conv1_bias_ = store.get("encoder.subsample.conv1.bias");
  conv2_kernel_ = store.get("encoder.subsample.conv2.kernel");
  conv2_bias_ = store.get("encoder.subsample.conv2.bias");
  subsample_out_ = LinearParams<Scalar>::bind(store, "encoder.subsample.out");
  for (Index b = 0; b < config_.blocks; ++b) {
    const std::string n = "encoder.blocks." + std::to_string(b);
    Block block;
    block.ff1_norm = NormParams<Scalar>::bind(store, n + ".ff1.norm");
    block.ff1_in = LinearParams<Scalar>::bind(store, n + ".ff1.in");
    block.ff1_out = LinearParams<Scalar>::bind(store, n + ".ff1.out");
    block.mhsa_norm = NormParams<Scalar>::bind(store, n + ".mhsa.norm");
    block.mhsa = AttentionParams<Scalar>::bind(store, n + ".mhsa");
    block.conv_norm = NormParams<Scalar>::bind(store, n + ".conv.norm");
    block.pointwise_in = LinearParams<Scalar>::bind(store, n + ".conv.pointwise_in");
    block.depthwise_kernel = store.get(n + ".conv.depthwise.kernel");
    block.depthwise_bias = store.get(n + ".conv.depthwise.bias");
    block.depthwise_norm = NormParams<Scalar>::bind(store, n + ".conv.depthwise_norm");
    block.pointwise_out = LinearParams<Scalar>::bind(store, n + ".conv.pointwise_out");
    block.ff2_norm = NormParams<Scalar>::bind(store, n + ".ff2.norm");
    block.ff2_in = LinearParams<Scalar>::bind(store, n + ".ff2.in");
    block.ff2_out = LinearParams<Scalar>::bind(store, n + ".ff2.out");
    block.final_norm = NormParams<Scalar>::bind(store, n + ".final_norm");
    blocks_.push_back(block);
  }
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::subsample(const Tensor<Scalar>& features) const {
  UFO2_CHECK(features.cols() == config_.feature_dim, ErrorKind::kDimension,
             "features " + features.shape_string() + " do not have " +
                 std::to_string(config_.feature_dim) + " bins");
  config_.output_length(features.rows());
  Tensor<Scalar> h = swish(conv2d_stride2(features, conv1_kernel_, conv1_bias_, 1));
  h = swish(conv2d_stride2(h, conv2_kernel_, conv2_bias_, config_.subsample_channels));
  return linear(h, subsample_out_.w, subsample_out_.b);
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::positional_encode(const Tensor<Scalar>& x) const {
  const Scalar xscale = std::sqrt(static_cast<Scalar>(x.cols()));
  return add(scale(x, xscale),
             Tensor<Scalar>(sinusoidal_encoding<Scalar>(x.rows(), x.cols())));
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::feed_forward(const Tensor<Scalar>& x,
                                             const LinearParams<Scalar>& in,
                                             const LinearParams<Scalar>& out,
                                             Rng* dropout_rng) const {
  Tensor<Scalar> h = swish(linear(x, in.w, in.b));
  const auto rate = static_cast<Scalar>(config_.dropout);
  if (dropout_rng != nullptr) h = dropout(h, rate, *dropout_rng);
  h = linear(h, out.w, out.b);
  if (dropout_rng != nullptr) h = dropout(h, rate, *dropout_rng);
  return h;
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::conv_module(const Tensor<Scalar>& x, const Block& b,
                                            const ChunkSpec& spec) const {
  Tensor<Scalar> h = glu(linear(x, b.pointwise_in.w, b.pointwise_in.b));
  const bool causal = config_.conv_mode == ConvMode::kCausal;
  const Validity validity = causal ? Validity(h.rows(), h.rows() - 1)
                                   : conv_validity(h.rows(), spec);
  h = depthwise_conv1d(h, b.depthwise_kernel, validity,
                       causal ? ConvAlignment::kCausal : ConvAlignment::kCentered);
  h = add_bias(h, b.depthwise_bias);
  h = swish(layer_norm(h, b.depthwise_norm.gain, b.depthwise_norm.shift));
  return linear(h, b.pointwise_out.w, b.pointwise_out.b);
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::conformer_block(const Tensor<Scalar>& input,
                                                const ChunkSpec& spec, Index index,
                                                Rng* dropout_rng) const {
  const Block& b = blocks_.at(index);
  const Scalar half(0.5);
  Tensor<Scalar> x = input;
  x = add(x, scale(feed_forward(layer_norm(x, b.ff1_norm.gain, b.ff1_norm.shift),
                                b.ff1_in, b.ff1_out, dropout_rng),
                   half));
  const Matrix<Scalar> bias = build_attention_bias<Scalar>(x.rows(), spec);
  Tensor<Scalar> att = multi_head_attention(
      layer_norm(x, b.mhsa_norm.gain, b.mhsa_norm.shift),
      layer_norm(x, b.mhsa_norm.gain, b.mhsa_norm.shift), b.mhsa, config_.heads, bias);
  x = add(x, att);
  x = add(x, conv_module(layer_norm(x, b.conv_norm.gain, b.conv_norm.shift), b, spec));
  x = add(x, scale(feed_forward(layer_norm(x, b.ff2_norm.gain, b.ff2_norm.shift),
                                b.ff2_in, b.ff2_out, dropout_rng),
                   half));
  return layer_norm(x, b.final_norm.gain, b.final_norm.shift);
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::context(const Tensor<Scalar>& subsampled,
                                        const ChunkSpec& spec, Rng* dropout_rng) const {
  Tensor<Scalar> x = positional_encode(subsampled);
  for (Index b = 0; b < config_.blocks; ++b) x = conformer_block(x, spec, b, dropout_rng);
  return x;
}

template <typename Scalar>
EncodedPair<Scalar> Encoder<Scalar>::encode(const Tensor<Scalar>& features,
                                            const ChunkSpec& online,
                                            const MaskInput<Scalar>* mask,
                                            Rng* dropout_rng) const {
  EncodedPair<Scalar> pair;
  pair.features = subsample(features);
  pair.length = pair.features.rows();
  Tensor<Scalar> input = pair.features;
  if (mask != nullptr && mask->mask != nullptr) {
    input = replace_rows(input, mask->mask->masked, mask->embedding);
  }
  pair.offline = context(input, ChunkSpec::unbounded(), dropout_rng);
  pair.online = context(input, online, dropout_rng);
  return pair;
}

template <typename Scalar>
Tensor<Scalar> Encoder<Scalar>::encode_single(const Tensor<Scalar>& features,
                                              const ChunkSpec& spec) const {
  return context(subsample(features), spec, nullptr);
}

#define UFO2_INSTANTIATE_ENCODER(S)                                              \
  template struct AttentionParams<S>;                                            \
  template void add_attention(ParamStore<S>&, const std::string&, Index, Rng&);  \
  template Tensor<S> multi_head_attention(const Tensor<S>&, const Tensor<S>&,    \
                                          const AttentionParams<S>&, Index,      \
                                          const Matrix<S>&);                     \
  template Matrix<S> sinusoidal_encoding<S>(Index, Index);                       \
  template class Encoder<S>;

UFO2_INSTANTIATE_ENCODER(float)
UFO2_INSTANTIATE_ENCODER(double)

}  // namespace ufo2
