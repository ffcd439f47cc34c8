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

#include "ufo2/quantizer.h"

#include <algorithm>

#include "ufo2/rng.h"

namespace ufo2 {

void QuantizerConfig::validate() const {
  UFO2_CHECK(groups >= 1 && entries >= 1 && dim >= groups && dim % groups == 0,
             ErrorKind::kConfiguration, "quantizer.dim must be a multiple of quantizer.groups");
  UFO2_CHECK(temperature > 0 && temperature_end > 0, ErrorKind::kConfiguration,
             "quantizer temperature must be positive");
  UFO2_CHECK(anneal_steps >= 0, ErrorKind::kConfiguration, "negative anneal_steps");
}

double QuantizerConfig::temperature_at(Index step) const {
  if (anneal_steps == 0 || step >= anneal_steps) {
    return anneal_steps == 0 ? temperature : temperature_end;
  }
  const double frac = static_cast<double>(step) / static_cast<double>(anneal_steps);
  return temperature + frac * (temperature_end - temperature);
}

void PretrainConfig::validate() const {
  UFO2_CHECK(lambda >= 0 && lambda <= 1, ErrorKind::kConfiguration,
             "loss.lambda must be in [0, 1]");
  UFO2_CHECK(kappa > 0, ErrorKind::kConfiguration, "loss.kappa must be positive");
  UFO2_CHECK(negatives >= 0, ErrorKind::kConfiguration, "loss.negatives must be >= 0");
  UFO2_CHECK(diversity_weight >= 0, ErrorKind::kConfiguration,
             "loss.diversity_weight must be >= 0");
  UFO2_CHECK(mask_prob > 0 && mask_prob <= 1, ErrorKind::kConfiguration,
             "mask.prob must be in (0, 1]");
  UFO2_CHECK(mask_span >= 1, ErrorKind::kConfiguration, "mask.span must be >= 1");
}

template <typename Scalar>
void Quantizer<Scalar>::init_params(const QuantizerConfig& c, Index d_model,
                                    ParamStore<Scalar>& store, Rng& rng) {
  c.validate();
  add_layer_norm(store, "quantizer.norm", d_model);
  Matrix<Scalar> logits_w(d_model, c.groups * c.entries);
  for (Index i = 0; i < logits_w.size(); ++i) {
    logits_w.data()[i] = static_cast<Scalar>(rng.normal());
  }
  store.add("quantizer.logits.w", logits_w);
  store.add("quantizer.logits.b", Matrix<Scalar>::Zero(1, c.groups * c.entries));
  Matrix<Scalar> entries(c.groups * c.entries, c.dim / c.groups);
  for (Index i = 0; i < entries.size(); ++i) {
    entries.data()[i] = static_cast<Scalar>(rng.uniform());
  }
  store.add("quantizer.entries", entries);
  add_linear(store, "quantizer.out", c.dim, d_model, rng);
}

template <typename Scalar>
Quantizer<Scalar>::Quantizer(const QuantizerConfig& config, const ParamStore<Scalar>& store)
    : config_(config) {
  config_.validate();
  norm_ = NormParams<Scalar>::bind(store, "quantizer.norm");
  logits_ = LinearParams<Scalar>::bind(store, "quantizer.logits");
  out_ = LinearParams<Scalar>::bind(store, "quantizer.out");
  entries_ = store.get("quantizer.entries");
}

template <typename Scalar>
QuantizerOutput<Scalar> Quantizer<Scalar>::quantize(const Tensor<Scalar>& e,
                                                    Scalar temperature,
                                                    QuantizerMode mode, Rng* rng) const {
  const Index g = config_.groups;
  const Index v = config_.entries;
  QuantizerOutput<Scalar> out;
  Tensor<Scalar> logits = linear(layer_norm(e, norm_.gain, norm_.shift), logits_.w, logits_.b);
  out.probs = grouped_softmax(logits, g);
  switch (mode) {
    case QuantizerMode::kSoft:
      out.selection = grouped_softmax(logits, g, temperature);
      break;
    case QuantizerMode::kArgmax:
      out.selection = gumbel_softmax_st(logits, g, temperature);
      break;
    case QuantizerMode::kGumbel: {
      UFO2_CHECK(rng != nullptr, ErrorKind::kConfiguration,
                 "gumbel quantization needs a random generator");
      Matrix<Scalar> noise(logits.rows(), logits.cols());
      for (Index i = 0; i < noise.size(); ++i) {
        noise.data()[i] = static_cast<Scalar>(rng->gumbel());
      }
      out.selection = gumbel_softmax_st(logits, g, temperature, &noise);
      break;
    }
  }
  std::vector<Tensor<Scalar>> parts;
  parts.reserve(g);
  for (Index i = 0; i < g; ++i) {
    parts.push_back(matmul(slice_cols(out.selection, i * v, v), slice_rows(entries_, i * v, v)));
  }
  Tensor<Scalar> codes = g == 1 ? parts[0] : concat_cols(parts);
  out.q = linear(codes, out_.w, out_.b);
  return out;
}

template <typename Scalar>
Tensor<Scalar> diversity_loss(const Tensor<Scalar>& probs, Index groups) {
  UFO2_CHECK(groups >= 1 && probs.cols() % groups == 0, ErrorKind::kDimension,
             "diversity_loss: columns not divisible by groups");
  const Index v = probs.cols() / groups;
  const Scalar total = static_cast<Scalar>(probs.cols());
  Tensor<Scalar> avg = mean_rows(probs);
  Tensor<Scalar> plogp = cwise_product(avg, log(avg, Scalar(1e-7)));
  std::vector<Tensor<Scalar>> perplexities;
  std::vector<Scalar> weights;
  for (Index g = 0; g < groups; ++g) {
    perplexities.push_back(exp(scale(sum(slice_cols(plogp, g * v, v)), Scalar(-1))));
    weights.push_back(Scalar(-1) / total);
  }
  perplexities.push_back(Tensor<Scalar>::scalar(Scalar(1)));
  weights.push_back(Scalar(1));
  return weighted_sum(perplexities, weights);
}

ContrastiveContext sample_contrastive(const SslMask& mask, Index negatives, double kappa,
                                      Rng& rng) {
  UFO2_CHECK(negatives >= 0, ErrorKind::kConfiguration, "negatives must be >= 0");
  ContrastiveContext ctx;
  ctx.kappa = kappa;
  ctx.frames = mask.masked_indices();
  const Index m = static_cast<Index>(ctx.frames.size());
  ctx.distractors.resize(m);
  if (m < 2) return ctx;
  for (Index i = 0; i < m; ++i) {
    auto& d = ctx.distractors[i];
    d.reserve(negatives);
    for (Index k = 0; k < negatives; ++k) {
      Index j = rng.uniform_int(0, m - 2);
      if (j >= i) ++j;
      d.push_back(j);
    }
  }
  return ctx;
}

template <typename Scalar>
Tensor<Scalar> contrastive_loss(const Tensor<Scalar>& c, const Tensor<Scalar>& q,
                                const ContrastiveContext& ctx) {
  UFO2_CHECK(!ctx.frames.empty(), ErrorKind::kInvalidMask,
             "contrastive loss needs at least one masked frame");
  UFO2_CHECK(ctx.distractors.size() == ctx.frames.size(), ErrorKind::kDimension,
             "one distractor set per masked frame");
  UFO2_CHECK(c.rows() == q.rows() && c.cols() == q.cols(), ErrorKind::kDimension,
             "context " + c.shape_string() + " and targets " + q.shape_string() +
                 " differ");
  const Index m = static_cast<Index>(ctx.frames.size());
  std::vector<std::vector<Index>> candidates(m);
  for (Index i = 0; i < m; ++i) {
    candidates[i].push_back(i);
    for (Index j : ctx.distractors[i]) {
      UFO2_CHECK(j >= 0 && j < m && j != i, ErrorKind::kInvalidMask,
                 "distractor must be another masked frame");
      candidates[i].push_back(j);
    }
    UFO2_CHECK(candidates[i].size() == candidates[0].size(), ErrorKind::kDimension,
               "distractor sets must have equal size");
  }
  Tensor<Scalar> cn = l2_normalize_rows(gather_rows(c, ctx.frames));
  Tensor<Scalar> qn = l2_normalize_rows(gather_rows(q, ctx.frames));
  Tensor<Scalar> sims =
      scale(matmul_transposed(cn, qn), static_cast<Scalar>(1.0 / ctx.kappa));
  Tensor<Scalar> logp = log_softmax(take_per_row(sims, candidates));
  return scale(mean(slice_cols(logp, 0, 1)), Scalar(-1));
}

template <typename Scalar>
PretrainLosses<Scalar> pretrain_objective(const EncodedPair<Scalar>& pair,
                                          const QuantizerOutput<Scalar>& quantized,
                                          const ContrastiveContext& ctx,
                                          const PretrainConfig& config, Index groups) {
  PretrainLosses<Scalar> out;
  out.offline = contrastive_loss(pair.offline, quantized.q, ctx);
  Tensor<Scalar> target = config.stop_grad ? stop_gradient(quantized.q) : quantized.q;
  out.online = contrastive_loss(pair.online, target, ctx);
  out.diversity = diversity_loss(quantized.probs, groups);
  const auto lambda = static_cast<Scalar>(config.lambda);
  out.total = weighted_sum<Scalar>({out.offline, out.online, out.diversity},
                                   {lambda, Scalar(1) - lambda,
                                    static_cast<Scalar>(config.diversity_weight)});
  return out;
}

template <typename Scalar>
PretrainLosses<Scalar> pretrain_loss(const Encoder<Scalar>& encoder,
                                     const Quantizer<Scalar>& quantizer,
                                     const Tensor<Scalar>& mask_embedding,
                                     const Tensor<Scalar>& features, const ChunkSpec& online,
                                     const PretrainConfig& config, QuantizerMode mode,
                                     Scalar temperature, Rng& rng, Rng* dropout_rng) {
  const Index length = encoder.config().output_length(features.rows());
  SslMask mask = sample_ssl_mask(length, config.mask_prob, config.mask_span, rng);
  MaskInput<Scalar> mi{&mask, mask_embedding};
  EncodedPair<Scalar> pair = encoder.encode(features, online, &mi, dropout_rng);
  QuantizerOutput<Scalar> quantized = quantizer.quantize(pair.features, temperature, mode, &rng);
  ContrastiveContext ctx = sample_contrastive(mask, config.negatives, config.kappa, rng);
  return pretrain_objective(pair, quantized, ctx, config, quantizer.config().groups);
}

#define UFO2_INSTANTIATE_QUANTIZER(S)                                                  \
  template class Quantizer<S>;                                                         \
  template Tensor<S> diversity_loss(const Tensor<S>&, Index);                          \
  template Tensor<S> contrastive_loss(const Tensor<S>&, const Tensor<S>&,              \
                                      const ContrastiveContext&);                      \
  template PretrainLosses<S> pretrain_objective(const EncodedPair<S>&,                 \
                                                const QuantizerOutput<S>&,             \
                                                const ContrastiveContext&,             \
                                                const PretrainConfig&, Index);         \
  template PretrainLosses<S> pretrain_loss(const Encoder<S>&, const Quantizer<S>&,     \
                                           const Tensor<S>&, const Tensor<S>&,         \
                                           const ChunkSpec&, const PretrainConfig&,    \
                                           QuantizerMode, S, Rng&, Rng*);

UFO2_INSTANTIATE_QUANTIZER(float)
UFO2_INSTANTIATE_QUANTIZER(double)

}  // namespace ufo2
