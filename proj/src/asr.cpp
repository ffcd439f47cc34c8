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

#include "ufo2/asr.h"

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "ufo2/ops.h"
#include "ufo2/rng.h"

namespace ufo2 {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

}  // namespace

Index ctc_min_frames(const TokenIds& labels) {
  Index n = static_cast<Index>(labels.size());
  for (std::size_t i = 1; i < labels.size(); ++i) {
    if (labels[i] == labels[i - 1]) ++n;
  }
  return n;
}

template <typename Scalar>
Tensor<Scalar> ctc_loss(const Tensor<Scalar>& log_probs, const TokenIds& labels) {
  const Index frames = log_probs.rows();
  const Index vocab = log_probs.cols();
  UFO2_CHECK(frames >= 1, ErrorKind::kLength, "ctc_loss: no frames");
  for (Index l : labels) {
    UFO2_CHECK(l > kBlankId && l < vocab, ErrorKind::kDimension,
               "ctc_loss: label id " + std::to_string(l) + " outside (blank, vocab)");
  }
  UFO2_CHECK(ctc_min_frames(labels) <= frames, ErrorKind::kInfeasibleAlignment,
             "ctc_loss: " + std::to_string(labels.size()) + " labels need " +
                 std::to_string(ctc_min_frames(labels)) + " frames, have " +
                 std::to_string(frames));

  const Matrix<double> lp = log_probs.value().template cast<double>();
  const Index states = 2 * static_cast<Index>(labels.size()) + 1;
  auto symbol = [&](Index s) { return s % 2 == 0 ? kBlankId : labels[s / 2]; };
  auto can_skip = [&](Index s) {
    return s >= 2 && s % 2 == 1 && symbol(s) != symbol(s - 2);
  };

  Matrix<double> alpha = Matrix<double>::Constant(frames, states, kNegInf);
  alpha(0, 0) = lp(0, kBlankId);
  if (states > 1) alpha(0, 1) = lp(0, symbol(1));
  for (Index t = 1; t < frames; ++t) {
    for (Index s = 0; s < states; ++s) {
      double acc = alpha(t - 1, s);
      if (s >= 1) acc = log_add(acc, alpha(t - 1, s - 1));
      if (can_skip(s)) acc = log_add(acc, alpha(t - 1, s - 2));
      if (acc != kNegInf) alpha(t, s) = acc + lp(t, symbol(s));
    }
  }
  double log_z = alpha(frames - 1, states - 1);
  if (states > 1) log_z = log_add(log_z, alpha(frames - 1, states - 2));
  UFO2_CHECK(std::isfinite(log_z), ErrorKind::kInfeasibleAlignment,
             "ctc_loss: labels have zero probability under the posteriors");

  Tensor<Scalar> out = Tensor<Scalar>::scalar(static_cast<Scalar>(-log_z));
  if (!should_record(log_probs)) return out;

  Matrix<double> beta = Matrix<double>::Constant(frames, states, kNegInf);
  beta(frames - 1, states - 1) = lp(frames - 1, symbol(states - 1));
  if (states > 1) beta(frames - 1, states - 2) = lp(frames - 1, symbol(states - 2));
  for (Index t = frames - 2; t >= 0; --t) {
    for (Index s = 0; s < states; ++s) {
      double acc = beta(t + 1, s);
      if (s + 1 < states) acc = log_add(acc, beta(t + 1, s + 1));
      if (s + 2 < states && can_skip(s + 2)) acc = log_add(acc, beta(t + 1, s + 2));
      if (acc != kNegInf) beta(t, s) = acc + lp(t, symbol(s));
    }
  }
  Matrix<double> occupancy = Matrix<double>::Zero(frames, vocab);
  for (Index t = 0; t < frames; ++t) {
    for (Index s = 0; s < states; ++s) {
      const double a = alpha(t, s);
      const double b = beta(t, s);
      if (a == kNegInf || b == kNegInf) continue;
      occupancy(t, symbol(s)) += std::exp(a + b - lp(t, symbol(s)) - log_z);
    }
  }
  Matrix<Scalar> grad = (-occupancy).template cast<Scalar>();
  out.set_backward([log_probs, grad](const Matrix<Scalar>& g) {
    log_probs.add_grad(grad * g(0, 0));
  });
  return out;
}

void DecoderConfig::validate() const {
  UFO2_CHECK(vocab > kReservedSymbols, ErrorKind::kConfiguration,
             "vocabulary must contain at least one non-reserved symbol");
  UFO2_CHECK(d_model >= 1 && heads >= 1 && d_model % heads == 0, ErrorKind::kConfiguration,
             "decoder d_model must be divisible by heads");
  UFO2_CHECK(blocks >= 1 && ff_expansion >= 1, ErrorKind::kConfiguration,
             "decoder sizes must be positive");
  UFO2_CHECK(dropout >= 0 && dropout < 1, ErrorKind::kConfiguration,
             "dropout must be in [0, 1)");
}

template <typename Scalar>
void Decoder<Scalar>::init_params(const DecoderConfig& c, ParamStore<Scalar>& store,
                                  Rng& rng) {
  c.validate();
  const Index d = c.d_model;
  store.add("decoder.embed", glorot_uniform<Scalar>(c.vocab, d, c.vocab, d, rng));
  for (Index b = 0; b < c.blocks; ++b) {
    const std::string n = "decoder.blocks." + std::to_string(b);
    add_layer_norm(store, n + ".self.norm", d);
    add_attention(store, n + ".self", d, rng);
    add_layer_norm(store, n + ".cross.norm", d);
    add_attention(store, n + ".cross", d, rng);
    add_layer_norm(store, n + ".ff.norm", d);
    add_linear(store, n + ".ff.in", d, d * c.ff_expansion, rng);
    add_linear(store, n + ".ff.out", d * c.ff_expansion, d, rng);
  }
  add_layer_norm(store, "decoder.final_norm", d);
  add_linear(store, "decoder.out", d, c.vocab, rng);
}

template <typename Scalar>
Decoder<Scalar>::Decoder(const DecoderConfig& config, const ParamStore<Scalar>& store)
    : config_(config) {
  config_.validate();
  embed_ = store.get("decoder.embed");
  for (Index b = 0; b < config_.blocks; ++b) {
    const std::string n = "decoder.blocks." + std::to_string(b);
    Block block;
    block.self_norm = NormParams<Scalar>::bind(store, n + ".self.norm");
    block.self_attn = AttentionParams<Scalar>::bind(store, n + ".self");
    block.cross_norm = NormParams<Scalar>::bind(store, n + ".cross.norm");
    block.cross_attn = AttentionParams<Scalar>::bind(store, n + ".cross");
    block.ff_norm = NormParams<Scalar>::bind(store, n + ".ff.norm");
    block.ff_in = LinearParams<Scalar>::bind(store, n + ".ff.in");
    block.ff_out = LinearParams<Scalar>::bind(store, n + ".ff.out");
    blocks_.push_back(block);
  }
  final_norm_ = NormParams<Scalar>::bind(store, "decoder.final_norm");
  out_ = LinearParams<Scalar>::bind(store, "decoder.out");
}

template <typename Scalar>
Tensor<Scalar> Decoder<Scalar>::forward(const Tensor<Scalar>& context, const TokenIds& tokens,
                                        Rng* dropout_rng) const {
  UFO2_CHECK(!tokens.empty(), ErrorKind::kLength, "decoder needs at least the sos token");
  UFO2_CHECK(context.cols() == config_.d_model, ErrorKind::kDimension,
             "decoder context " + context.shape_string() + " does not match d_model");
  for (Index t : tokens) {
    UFO2_CHECK(t >= 0 && t < config_.vocab, ErrorKind::kDimension,
               "token id " + std::to_string(t) + " outside vocabulary");
  }
  const Index length = static_cast<Index>(tokens.size());
  const auto d = config_.d_model;
  const auto rate = static_cast<Scalar>(config_.dropout);
  auto drop = [&](const Tensor<Scalar>& x) {
    return dropout_rng != nullptr ? dropout(x, rate, *dropout_rng) : x;
  };
  Tensor<Scalar> x = add(scale(gather_rows(embed_, tokens), std::sqrt(static_cast<Scalar>(d))),
                         Tensor<Scalar>(sinusoidal_encoding<Scalar>(length, d)));
  const Matrix<Scalar> causal = build_attention_bias<Scalar>(length, ChunkSpec::bounded(1));
  const Matrix<Scalar> open = Matrix<Scalar>::Zero(length, context.rows());
  for (const Block& b : blocks_) {
    Tensor<Scalar> h = layer_norm(x, b.self_norm.gain, b.self_norm.shift);
    x = add(x, drop(multi_head_attention(h, h, b.self_attn, config_.heads, causal)));
    h = layer_norm(x, b.cross_norm.gain, b.cross_norm.shift);
    x = add(x, drop(multi_head_attention(h, context, b.cross_attn, config_.heads, open)));
    h = layer_norm(x, b.ff_norm.gain, b.ff_norm.shift);
    h = linear(drop(relu(linear(h, b.ff_in.w, b.ff_in.b))), b.ff_out.w, b.ff_out.b);
    x = add(x, drop(h));
  }
  x = layer_norm(x, final_norm_.gain, final_norm_.shift);
  return log_softmax(linear(x, out_.w, out_.b));
}

template <typename Scalar>
double Decoder<Scalar>::sequence_log_prob(const Tensor<Scalar>& context,
                                          const TokenIds& labels) const {
  NoGradGuard<Scalar> guard;
  TokenIds input{kSosEosId};
  input.insert(input.end(), labels.begin(), labels.end());
  const Matrix<Scalar> lp = forward(context, input).value();
  double total = 0;
  for (std::size_t u = 0; u < labels.size(); ++u) total += lp(u, labels[u]);
  return total + lp(labels.size(), kSosEosId);
}

template <typename Scalar>
Tensor<Scalar> att_loss(const Tensor<Scalar>& log_probs, const TokenIds& targets,
                        double smoothing) {
  UFO2_CHECK(static_cast<Index>(targets.size()) == log_probs.rows(), ErrorKind::kDimension,
             "att_loss: " + std::to_string(targets.size()) + " targets for " +
                 log_probs.shape_string() + " log-probabilities");
  UFO2_CHECK(smoothing >= 0 && smoothing <= 1, ErrorKind::kConfiguration,
             "label smoothing must be in [0, 1]");
  std::vector<std::vector<Index>> picks;
  for (Index t : targets) picks.push_back({t});
  const auto s = static_cast<Scalar>(smoothing);
  Tensor<Scalar> nll = mean(take_per_row(log_probs, picks));
  Tensor<Scalar> uniform = mean(log_probs);
  return weighted_sum<Scalar>({nll, uniform}, {s - Scalar(1), -s});
}

template <typename Scalar>
Tensor<Scalar> hybrid_loss(const Tensor<Scalar>& ctc, const Tensor<Scalar>& att,
                           double epsilon) {
  UFO2_CHECK(epsilon >= 0 && epsilon <= 1, ErrorKind::kConfiguration,
             "loss.epsilon must be in [0, 1]");
  const auto e = static_cast<Scalar>(epsilon);
  return weighted_sum<Scalar>({ctc, att}, {e, Scalar(1) - e});
}

template <typename Scalar>
void AsrHead<Scalar>::init_params(const DecoderConfig& config, ParamStore<Scalar>& store,
                                  Rng& rng) {
  config.validate();
  add_linear(store, "ctc", config.d_model, config.vocab, rng);
  Decoder<Scalar>::init_params(config, store, rng);
}

template <typename Scalar>
AsrHead<Scalar>::AsrHead(const DecoderConfig& config, const ParamStore<Scalar>& store)
    : ctc_(LinearParams<Scalar>::bind(store, "ctc")), decoder_(config, store) {}

template <typename Scalar>
Tensor<Scalar> AsrHead<Scalar>::ctc_log_probs(const Tensor<Scalar>& context) const {
  return log_softmax(linear(context, ctc_.w, ctc_.b));
}

FinetuneMode parse_finetune_mode(const std::string& text) {
  if (text == "joint") return FinetuneMode::kJoint;
  if (text == "random") return FinetuneMode::kRandom;
  throw Error(ErrorKind::kConfiguration, "loss.mode must be joint or random, got '" + text + "'");
}

const char* to_string(FinetuneMode mode) {
  return mode == FinetuneMode::kRandom ? "random" : "joint";
}

void FinetuneConfig::validate() const {
  UFO2_CHECK(alpha >= 0 && alpha <= 1, ErrorKind::kConfiguration, "loss.alpha must be in [0, 1]");
  UFO2_CHECK(epsilon >= 0 && epsilon <= 1, ErrorKind::kConfiguration,
             "loss.epsilon must be in [0, 1]");
  UFO2_CHECK(label_smoothing >= 0 && label_smoothing < 1, ErrorKind::kConfiguration,
             "loss.label_smoothing must be in [0, 1)");
}

template <typename Scalar>
HybridTerms<Scalar> hybrid_terms(const AsrHead<Scalar>& head, const Tensor<Scalar>& context,
                                 const TokenIds& labels, const FinetuneConfig& config,
                                 Rng* dropout_rng) {
  HybridTerms<Scalar> out;
  out.ctc = ctc_loss(head.ctc_log_probs(context), labels);
  TokenIds input{kSosEosId};
  input.insert(input.end(), labels.begin(), labels.end());
  TokenIds targets = labels;
  targets.push_back(kSosEosId);
  out.att = att_loss(head.decoder().forward(context, input, dropout_rng), targets,
                     config.label_smoothing);
  out.hybrid = hybrid_loss(out.ctc, out.att, config.epsilon);
  return out;
}

template <typename Scalar>
FinetuneLosses<Scalar> finetune_loss(const Encoder<Scalar>& encoder,
                                     const AsrHead<Scalar>& head,
                                     const Tensor<Scalar>& features, const TokenIds& labels,
                                     const ChunkSpec& online, const FinetuneConfig& config,
                                     Branch branch, Rng* dropout_rng) {
  FinetuneLosses<Scalar> out;
  if (branch == Branch::kBoth) {
    EncodedPair<Scalar> pair = encoder.encode(features, online, nullptr, dropout_rng);
    out.offline = hybrid_terms(head, pair.offline, labels, config, dropout_rng);
    out.online = hybrid_terms(head, pair.online, labels, config, dropout_rng);
    const auto a = static_cast<Scalar>(config.alpha);
    out.total = weighted_sum<Scalar>({out.offline->hybrid, out.online->hybrid},
                                     {a, Scalar(1) - a});
    return out;
  }
  const ChunkSpec spec = branch == Branch::kOffline ? ChunkSpec::unbounded() : online;
  Tensor<Scalar> context = encoder.context(encoder.subsample(features), spec, dropout_rng);
  auto terms = hybrid_terms(head, context, labels, config, dropout_rng);
  out.total = terms.hybrid;
  (branch == Branch::kOffline ? out.offline : out.online) = terms;
  return out;
}

std::vector<Hypothesis> ctc_prefix_beam_search(const Matrix<double>& log_probs, Index beam) {
  UFO2_CHECK(beam >= 1, ErrorKind::kConfiguration, "beam must be >= 1");
  struct Score {
    double blank = kNegInf;
    double non_blank = kNegInf;
    double total() const { return log_add(blank, non_blank); }
  };
  using Beam = std::map<TokenIds, Score>;
  auto prune = [beam](const Beam& all) {
    std::vector<std::pair<TokenIds, Score>> items;
    for (const auto& item : all) {
      if (item.second.total() != kNegInf) items.push_back(item);
    }
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      return a.second.total() > b.second.total();
    });
    if (static_cast<Index>(items.size()) > beam) items.resize(beam);
    return items;
  };

  std::vector<std::pair<TokenIds, Score>> current{{TokenIds{}, Score{0.0, kNegInf}}};
  for (Index t = 0; t < log_probs.rows(); ++t) {
    Beam next;
    for (const auto& [prefix, score] : current) {
      for (Index c = 0; c < log_probs.cols(); ++c) {
        const double p = log_probs(t, c);
        if (c == kBlankId) {
          Score& s = next[prefix];
          s.blank = log_add(s.blank, score.total() + p);
          continue;
        }
        TokenIds extended = prefix;
        extended.push_back(c);
        Score& e = next[extended];
        if (!prefix.empty() && prefix.back() == c) {
          Score& s = next[prefix];
          s.non_blank = log_add(s.non_blank, score.non_blank + p);
          e.non_blank = log_add(e.non_blank, score.blank + p);
        } else {
          e.non_blank = log_add(e.non_blank, score.total() + p);
        }
      }
    }
    current = prune(next);
  }
  std::vector<Hypothesis> hyps;
  for (const auto& [prefix, score] : current) {
    Hypothesis h;
    h.tokens = prefix;
    h.ctc_log_score = score.total();
    hyps.push_back(h);
  }
  return hyps;
}

void rank_by_combined(std::vector<Hypothesis>& hyps, double weight) {
  for (Hypothesis& h : hyps) {
    UFO2_CHECK(h.att_log_score.has_value(), ErrorKind::kConfiguration,
               "rescoring needs an attention score for every hypothesis");
    h.combined = weight * h.ctc_log_score + (1 - weight) * *h.att_log_score;
  }
  std::stable_sort(hyps.begin(), hyps.end(), [](const Hypothesis& a, const Hypothesis& b) {
    return *a.combined > *b.combined;
  });
}

template <typename Scalar>
std::vector<Hypothesis> attention_rescore(std::vector<Hypothesis> hyps,
                                          const Tensor<Scalar>& context,
                                          const Decoder<Scalar>& decoder, double weight) {
  UFO2_CHECK(!hyps.empty(), ErrorKind::kConfiguration, "attention_rescore: no hypotheses");
  for (Hypothesis& h : hyps) h.att_log_score = decoder.sequence_log_prob(context, h.tokens);
  rank_by_combined(hyps, weight);
  return hyps;
}

std::vector<std::string> split_words(const std::string& text) {
  std::istringstream in(text);
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

double wer(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  UFO2_CHECK(!ref.empty(), ErrorKind::kUndefinedMetric, "WER of an empty reference");
  return static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

#define UFO2_INSTANTIATE_ASR(S)                                                         \
  template Tensor<S> ctc_loss(const Tensor<S>&, const TokenIds&);                       \
  template class Decoder<S>;                                                            \
  template class AsrHead<S>;                                                            \
  template Tensor<S> att_loss(const Tensor<S>&, const TokenIds&, double);               \
  template Tensor<S> hybrid_loss(const Tensor<S>&, const Tensor<S>&, double);           \
  template HybridTerms<S> hybrid_terms(const AsrHead<S>&, const Tensor<S>&,             \
                                       const TokenIds&, const FinetuneConfig&, Rng*);   \
  template FinetuneLosses<S> finetune_loss(const Encoder<S>&, const AsrHead<S>&,        \
                                           const Tensor<S>&, const TokenIds&,           \
                                           const ChunkSpec&, const FinetuneConfig&,     \
                                           Branch, Rng*);                               \
  template std::vector<Hypothesis> attention_rescore(std::vector<Hypothesis>,           \
                                                     const Tensor<S>&,                  \
                                                     const Decoder<S>&, double);

UFO2_INSTANTIATE_ASR(float)
UFO2_INSTANTIATE_ASR(double)

}  // namespace ufo2
