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

#ifndef UFO2_ASR_H_
#define UFO2_ASR_H_

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include "ufo2/encoder.h"
#include "ufo2/params.h"

namespace ufo2 {

class Rng;

// Reserved symbols. The vocabulary file lists them first.
inline constexpr Index kBlankId = 0;
inline constexpr Index kUnkId = 1;
inline constexpr Index kSosEosId = 2;
inline constexpr Index kReservedSymbols = 3;

using TokenIds = std::vector<Index>;

// -log p(labels | log_probs) summed over all CTC alignments. Computed in
// double precision regardless of Scalar. The gradient with respect to
// log_probs is minus the per-frame label occupancy.
template <typename Scalar>
Tensor<Scalar> ctc_loss(const Tensor<Scalar>& log_probs, const TokenIds& labels);

// Minimum number of frames an alignment of `labels` needs.
Index ctc_min_frames(const TokenIds& labels);

struct DecoderConfig {
  Index vocab = 0;
  Index d_model = 32;
  Index heads = 4;
  Index blocks = 2;
  Index ff_expansion = 4;
  double dropout = 0.1;

  void validate() const;
};

// Transformer decoder: causal self-attention over the input tokens,
// cross-attention over encoder context, ReLU feed-forward. Pre-norm.
template <typename Scalar>
class Decoder {
 public:
  static void init_params(const DecoderConfig& config, ParamStore<Scalar>& store, Rng& rng);
  Decoder(const DecoderConfig& config, const ParamStore<Scalar>& store);

  const DecoderConfig& config() const { return config_; }

  // tokens starts with sos; returns [tokens x vocab] log-probabilities.
  Tensor<Scalar> forward(const Tensor<Scalar>& context, const TokenIds& tokens,
                         Rng* dropout_rng = nullptr) const;

  // Teacher-forced log p(labels, eos | context).
  double sequence_log_prob(const Tensor<Scalar>& context, const TokenIds& labels) const;

 private:
  struct Block {
    NormParams<Scalar> self_norm, cross_norm, ff_norm;
    AttentionParams<Scalar> self_attn, cross_attn;
    LinearParams<Scalar> ff_in, ff_out;
  };
  DecoderConfig config_;
  Tensor<Scalar> embed_;
  std::vector<Block> blocks_;
  NormParams<Scalar> final_norm_;
  LinearParams<Scalar> out_;
};

// Mean over positions of
// -(1 - smoothing) * log p(target) - smoothing * mean_v log p(v).
template <typename Scalar>
Tensor<Scalar> att_loss(const Tensor<Scalar>& log_probs, const TokenIds& targets,
                        double smoothing);

// epsilon * ctc + (1 - epsilon) * att.
template <typename Scalar>
Tensor<Scalar> hybrid_loss(const Tensor<Scalar>& ctc, const Tensor<Scalar>& att,
                           double epsilon);

// CTC projection plus decoder.
template <typename Scalar>
class AsrHead {
 public:
  static void init_params(const DecoderConfig& config, ParamStore<Scalar>& store, Rng& rng);
  AsrHead(const DecoderConfig& config, const ParamStore<Scalar>& store);

  Tensor<Scalar> ctc_log_probs(const Tensor<Scalar>& context) const;
  const Decoder<Scalar>& decoder() const { return decoder_; }

 private:
  LinearParams<Scalar> ctc_;
  Decoder<Scalar> decoder_;
};

enum class FinetuneMode { kJoint, kRandom };
FinetuneMode parse_finetune_mode(const std::string& text);
const char* to_string(FinetuneMode mode);

// Which encoder passes a fine-tuning step scores.
enum class Branch { kBoth, kOffline, kOnline };

struct FinetuneConfig {
  double alpha = 0.75;
  double epsilon = 0.3;
  double label_smoothing = 0.1;
  FinetuneMode mode = FinetuneMode::kJoint;

  void validate() const;
};

template <typename Scalar>
struct HybridTerms {
  Tensor<Scalar> ctc, att, hybrid;
};

template <typename Scalar>
struct FinetuneLosses {
  Tensor<Scalar> total;
  std::optional<HybridTerms<Scalar>> offline, online;
};

template <typename Scalar>
HybridTerms<Scalar> hybrid_terms(const AsrHead<Scalar>& head, const Tensor<Scalar>& context,
                                 const TokenIds& labels, const FinetuneConfig& config,
                                 Rng* dropout_rng);

// kBoth: alpha * offline + (1 - alpha) * online. A single branch scores only
// that mode's hybrid loss.
template <typename Scalar>
FinetuneLosses<Scalar> finetune_loss(const Encoder<Scalar>& encoder,
                                     const AsrHead<Scalar>& head,
                                     const Tensor<Scalar>& features, const TokenIds& labels,
                                     const ChunkSpec& online, const FinetuneConfig& config,
                                     Branch branch, Rng* dropout_rng = nullptr);

struct Hypothesis {
  TokenIds tokens;
  double ctc_log_score = 0;
  std::optional<double> att_log_score;
  std::optional<double> combined;
};

// Prefix beam search over [T' x vocab] log-posteriors, best first.
std::vector<Hypothesis> ctc_prefix_beam_search(const Matrix<double>& log_probs, Index beam);

// Fills combined = weight * ctc + (1 - weight) * att and sorts best first.
// Hypotheses must carry att_log_score.
void rank_by_combined(std::vector<Hypothesis>& hyps, double weight);

template <typename Scalar>
std::vector<Hypothesis> attention_rescore(std::vector<Hypothesis> hyps,
                                          const Tensor<Scalar>& context,
                                          const Decoder<Scalar>& decoder, double weight);

// Unit-cost Levenshtein distance.
template <typename Token>
Index edit_distance(const std::vector<Token>& ref, const std::vector<Token>& hyp) {
  std::vector<Index> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = static_cast<Index>(j);
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = static_cast<Index>(i);
    for (std::size_t j = 1; j <= hyp.size(); ++j) {
      const Index sub = prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

std::vector<std::string> split_words(const std::string& text);

// Word error rate of one utterance; empty reference is an error.
double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp);

}  // namespace ufo2

#endif  // UFO2_ASR_H_
