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

#ifndef UFO2_QUANTIZER_H_
#define UFO2_QUANTIZER_H_

#include <string>
#include <vector>

#include "ufo2/chunking.h"
#include "ufo2/encoder.h"
#include "ufo2/params.h"

namespace ufo2 {

class Rng;

struct QuantizerConfig {
  Index groups = 2;
  Index entries = 32;
  Index dim = 32;  // d_q, split evenly over the groups
  double temperature = 0.5;
  double temperature_end = 0.5;
  Index anneal_steps = 0;

  void validate() const;
  // Linear anneal from temperature to temperature_end over anneal_steps.
  double temperature_at(Index step) const;
};

// kGumbel samples entries (training); kArgmax picks the best entry with a
// straight-through gradient; kSoft uses the full softmax mixture and is the
// differentiable surrogate for finite-difference checks.
enum class QuantizerMode { kGumbel, kArgmax, kSoft };

template <typename Scalar>
struct QuantizerOutput {
  Tensor<Scalar> q;      // [T' x d_model]
  Tensor<Scalar> probs;  // per-group softmax of the logits, [T' x G*V]
  Tensor<Scalar> selection;
};

template <typename Scalar>
class Quantizer {
 public:
  static void init_params(const QuantizerConfig& config, Index d_model,
                          ParamStore<Scalar>& store, Rng& rng);

  Quantizer(const QuantizerConfig& config, const ParamStore<Scalar>& store);

  const QuantizerConfig& config() const { return config_; }

  QuantizerOutput<Scalar> quantize(const Tensor<Scalar>& e, Scalar temperature,
                                   QuantizerMode mode, Rng* rng = nullptr) const;

 private:
  QuantizerConfig config_;
  NormParams<Scalar> norm_;
  LinearParams<Scalar> logits_, out_;
  Tensor<Scalar> entries_;  // [G*V x d_q/G], row g*V + v
};

// (G*V - sum_g exp(H(mean_t p_g))) / (G*V).
template <typename Scalar>
Tensor<Scalar> diversity_loss(const Tensor<Scalar>& probs, Index groups);

// Masked frames and, per masked frame, K distractors. Distractors are
// positions into `frames`.
struct ContrastiveContext {
  std::vector<Index> frames;
  std::vector<std::vector<Index>> distractors;
  double kappa = 0.1;
};

// Distractors are drawn with replacement from the other masked frames of the
// utterance. A lone masked frame gets none.
ContrastiveContext sample_contrastive(const SslMask& mask, Index negatives,
                                      double kappa, Rng& rng);

template <typename Scalar>
Tensor<Scalar> contrastive_loss(const Tensor<Scalar>& c, const Tensor<Scalar>& q,
                                const ContrastiveContext& ctx);

struct PretrainConfig {
  double lambda = 0.5;
  double kappa = 0.1;
  Index negatives = 10;
  double diversity_weight = 0.1;
  bool stop_grad = true;
  double mask_prob = 0.065;
  Index mask_span = 10;

  void validate() const;
};

template <typename Scalar>
struct PretrainLosses {
  Tensor<Scalar> total, offline, online, diversity;
};

// Combines the two contrastive terms and the diversity term from an already
// encoded pair and quantizer output.
template <typename Scalar>
PretrainLosses<Scalar> pretrain_objective(const EncodedPair<Scalar>& pair,
                                          const QuantizerOutput<Scalar>& quantized,
                                          const ContrastiveContext& ctx,
                                          const PretrainConfig& config, Index groups);

// One utterance: sample the mask, encode both modes, quantize the unmasked
// features and score.
template <typename Scalar>
PretrainLosses<Scalar> pretrain_loss(const Encoder<Scalar>& encoder,
                                     const Quantizer<Scalar>& quantizer,
                                     const Tensor<Scalar>& mask_embedding,
                                     const Tensor<Scalar>& features,
                                     const ChunkSpec& online,
                                     const PretrainConfig& config,
                                     QuantizerMode mode, Scalar temperature, Rng& rng,
                                     Rng* dropout_rng = nullptr);

}  // namespace ufo2

#endif  // UFO2_QUANTIZER_H_
