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

#include "ufo2/gradcheck_suite.h"

#include <cmath>
#include <functional>
#include <limits>
#include <map>

#include "ufo2/asr.h"
#include "ufo2/encoder.h"
#include "ufo2/gradcheck.h"
#include "ufo2/ops.h"
#include "ufo2/quantizer.h"
#include "ufo2/rng.h"

namespace ufo2 {

namespace {

using Mat = Matrix<double>;
using T = Tensor<double>;

class Suite {
 public:
  explicit Suite(std::uint64_t seed) : seed_(seed) {}

  Mat normal(Index r, Index c, double sd = 1.0) {
    Rng rng = Rng::derive(seed_, {++draws_});
    Mat m(r, c);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
    return m;
  }

  // Values bounded away from zero so kinks stay out of reach of the probe.
  Mat away_from_zero(Index r, Index c) {
    Mat m = normal(r, c);
    for (Index i = 0; i < m.size(); ++i) {
      double& v = m.data()[i];
      v = (v < 0 ? -0.2 : 0.2) + v;
    }
    return m;
  }

  T param(const Mat& m) { return T::parameter(m); }

  // Weighted sum with fixed weights, so every output element is probed.
  T probe(const T& y) {
    const auto it = probes_.find({y.rows(), y.cols()});
    if (it == probes_.end()) {
      probes_.emplace(std::make_pair(y.rows(), y.cols()), normal(y.rows(), y.cols()));
    }
    return sum(cwise_product(y, T(probes_.at({y.rows(), y.cols()}))));
  }

  void check(const std::string& name, double threshold, const std::function<T()>& program,
             const std::vector<NamedParam>& params, std::size_t samples = 0) {
    const auto report = grad_check(program, params, 1e-5, samples);
    results_.push_back({name, report.max_rel_error, threshold});
  }

  void record(const std::string& name, double threshold, double error) {
    results_.push_back({name, error, threshold});
  }

  std::vector<SuiteResult> take() { return std::move(results_); }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::map<std::pair<Index, Index>, Mat> probes_;
  std::vector<SuiteResult> results_;
};

EncoderConfig toy_encoder() {
  EncoderConfig c;
  c.feature_dim = 11;
  c.d_model = 8;
  c.heads = 2;
  c.blocks = 1;
  c.kernel = 3;
  c.ff_expansion = 2;
  c.subsample_channels = 2;
  c.dropout = 0.0;
  return c;
}

std::vector<NamedParam> all_params(const ParamStore<double>& store) {
  std::vector<NamedParam> out;
  for (const auto& [name, p] : store.all()) out.push_back({name, p});
  return out;
}

void check_linear_algebra(Suite& s) {
  T a = s.param(s.normal(4, 5)), b = s.param(s.normal(5, 3)), c = s.param(s.normal(3, 5));
  T d = s.param(s.normal(4, 5)), row = s.param(s.normal(1, 5));
  s.check("matmul", kDefaultThreshold, [&] { return s.probe(matmul(a, b)); },
          {{"a", a}, {"b", b}});
  s.check("matmul_transposed", kDefaultThreshold, [&] { return s.probe(matmul_transposed(a, c)); },
          {{"a", a}, {"c", c}});
  s.check("add", kSmoothThreshold, [&] { return s.probe(add(a, d)); }, {{"a", a}, {"d", d}});
  s.check("sub", kSmoothThreshold, [&] { return s.probe(sub(a, d)); }, {{"a", a}, {"d", d}});
  s.check("cwise_product", kSmoothThreshold, [&] { return s.probe(cwise_product(a, d)); },
          {{"a", a}, {"d", d}});
  s.check("add_bias", kSmoothThreshold, [&] { return s.probe(add_bias(a, row)); },
          {{"a", a}, {"row", row}});
  s.check("scale", kSmoothThreshold, [&] { return s.probe(scale(a, 1.7)); }, {{"a", a}});
  T w = s.param(s.normal(5, 3)), bias = s.param(s.normal(1, 3));
  s.check("linear", kDefaultThreshold, [&] { return s.probe(linear(a, w, bias)); },
          {{"x", a}, {"w", w}, {"b", bias}});
}

void check_reductions_and_indexing(Suite& s) {
  T a = s.param(s.normal(4, 5)), b = s.param(s.normal(4, 3)), r = s.param(s.normal(1, 5));
  s.check("sum", kSmoothThreshold, [&] { return scale(sum(a), 0.3); }, {{"a", a}});
  s.check("mean", kSmoothThreshold, [&] { return scale(mean(a), 0.3); }, {{"a", a}});
  s.check("mean_rows", kSmoothThreshold, [&] { return s.probe(mean_rows(a)); }, {{"a", a}});
  s.check("weighted_sum", kSmoothThreshold,
          [&] { return weighted_sum<double>({sum(a), s.probe(b)}, {0.25, -1.5}); },
          {{"a", a}, {"b", b}});
  s.check("slice_cols", kSmoothThreshold, [&] { return s.probe(slice_cols(a, 1, 3)); },
          {{"a", a}});
  s.check("slice_rows", kSmoothThreshold, [&] { return s.probe(slice_rows(a, 1, 2)); },
          {{"a", a}});
  s.check("concat_cols", kSmoothThreshold, [&] { return s.probe(concat_cols<double>({a, b})); },
          {{"a", a}, {"b", b}});
  s.check("gather_rows", kSmoothThreshold,
          [&] { return s.probe(gather_rows(a, {3, 0, 3, 1})); }, {{"a", a}});
  s.check("take_per_row", kSmoothThreshold,
          [&] { return s.probe(take_per_row(a, {{0, 4}, {2, 2}, {1, 3}, {4, 0}})); }, {{"a", a}});
  s.check("replace_rows", kSmoothThreshold,
          [&] { return s.probe(replace_rows(a, {false, true, false, true}, r)); },
          {{"a", a}, {"row", r}});
  // Backward of stop_gradient is zero by definition, so compare with the
  // same program where the blocked branch is a constant.
  const T frozen(Mat(a.value().array().square().matrix()));
  const auto reference =
      grad_check([&] { return s.probe(add(frozen, a)); }, {{"a", a}});
  a.zero_grad();
  {
    Graph<double> graph;
    graph.backward(s.probe(add(stop_gradient(cwise_product(a, a)), a)));
  }
  double worst = 0;
  for (const auto& e : reference.entries) {
    worst = std::max(worst, std::abs(a.grad().data()[e.index] - e.numeric) /
                                std::max({std::abs(e.numeric), 1e-3}));
  }
  s.record("stop_gradient", kSmoothThreshold, worst);
}

void check_nonlinearities(Suite& s) {
  T a = s.param(s.normal(4, 6));
  T kinked = s.param(s.away_from_zero(4, 6));
  T positive = s.param(Mat(s.normal(4, 6).array().abs() + 0.5));
  s.check("sigmoid", kSmoothThreshold, [&] { return s.probe(sigmoid(a)); }, {{"a", a}});
  s.check("swish", kSmoothThreshold, [&] { return s.probe(swish(a)); }, {{"a", a}});
  s.check("relu", kDefaultThreshold, [&] { return s.probe(relu(kinked)); }, {{"a", kinked}});
  s.check("glu", kSmoothThreshold, [&] { return s.probe(glu(a)); }, {{"a", a}});
  s.check("exp", kSmoothThreshold, [&] { return s.probe(exp(scale(a, 0.5))); }, {{"a", a}});
  s.check("log", kSmoothThreshold, [&] { return s.probe(log(positive, 0.1)); },
          {{"a", positive}});
  s.check("dropout", kSmoothThreshold,
          [&] {
            Rng rng(5);
            return s.probe(dropout(a, 0.3, rng));
          },
          {{"a", a}});
}

void check_normalization_and_softmax(Suite& s) {
  constexpr double kInf = std::numeric_limits<double>::infinity();
  T x = s.param(s.normal(4, 6)), gain = s.param(s.normal(1, 6)), shift = s.param(s.normal(1, 6));
  s.check("layer_norm", kDefaultThreshold, [&] { return s.probe(layer_norm(x, gain, shift)); },
          {{"x", x}, {"gain", gain}, {"shift", shift}});
  s.check("l2_normalize_rows", kDefaultThreshold,
          [&] { return s.probe(l2_normalize_rows(x)); }, {{"x", x}});
  T sq = s.param(s.normal(5, 5));
  Mat bias = Mat::Zero(5, 5);
  for (Index i = 0; i < 5; ++i) {
    for (Index j = i + 2; j < 5; ++j) bias(i, j) = -kInf;
  }
  s.check("masked_softmax", kDefaultThreshold,
          [&] { return s.probe(masked_softmax(sq, bias)); }, {{"logits", sq}});
  s.check("softmax", kDefaultThreshold, [&] { return s.probe(softmax(x)); }, {{"logits", x}});
  s.check("log_softmax", kDefaultThreshold, [&] { return s.probe(log_softmax(x)); },
          {{"logits", x}});
  s.check("grouped_softmax", kDefaultThreshold,
          [&] { return s.probe(grouped_softmax(x, 2, 0.7)); }, {{"logits", x}});

  // The straight-through estimator's backward is the gradient of the relaxed
  // softmax with the same noise; compare against differences of that.
  const Mat noise = s.normal(4, 6);
  T relaxed_in = s.param(x.value());
  const auto relaxed = grad_check(
      [&] {
        return s.probe(grouped_softmax(add(relaxed_in, T(noise)), 2, 0.7));
      },
      {{"logits", relaxed_in}});
  x.zero_grad();
  {
    Graph<double> graph;
    graph.backward(s.probe(gumbel_softmax_st(x, 2, 0.7, &noise)));
  }
  double worst = 0;
  for (const auto& e : relaxed.entries) {
    const double a = x.grad().data()[e.index];
    worst = std::max(worst, std::abs(a - e.numeric) /
                                std::max({std::abs(a), std::abs(e.numeric), 1e-3}));
  }
  s.record("gumbel_softmax_st", kDefaultThreshold, worst);
}

void check_convolutions(Suite& s) {
  T x = s.param(s.normal(7, 3)), kernel = s.param(s.normal(9, 2));
  const Validity chunked = {2, 2, 2, 5, 5, 5, 6};
  const Validity full(7, 6);
  s.check("conv1d", kDefaultThreshold, [&] { return s.probe(conv1d(x, kernel, chunked)); },
          {{"x", x}, {"kernel", kernel}});
  s.check("conv1d_causal", kDefaultThreshold,
          [&] { return s.probe(conv1d(x, kernel, full, ConvAlignment::kCausal)); },
          {{"x", x}, {"kernel", kernel}});
  T dk = s.param(s.normal(3, 3));
  s.check("depthwise_conv1d", kDefaultThreshold,
          [&] { return s.probe(depthwise_conv1d(x, dk, chunked)); }, {{"x", x}, {"kernel", dk}});
  s.check("depthwise_conv1d_causal", kDefaultThreshold,
          [&] { return s.probe(depthwise_conv1d(x, dk, full, ConvAlignment::kCausal)); },
          {{"x", x}, {"kernel", dk}});
  T image = s.param(s.normal(9, 2 * 7)), k2 = s.param(s.normal(2 * 9, 3));
  T b2 = s.param(s.normal(1, 3));
  s.check("conv2d_stride2", kDefaultThreshold,
          [&] { return s.probe(conv2d_stride2(image, k2, b2, 2)); },
          {{"x", image}, {"kernel", k2}, {"bias", b2}});
}

void check_attention_and_sequence_losses(Suite& s) {
  ParamStore<double> store;
  Rng rng(3);
  add_attention(store, "mhsa", 8, rng);
  const auto attention = AttentionParams<double>::bind(store, "mhsa");
  T x = s.param(s.normal(5, 8));
  const Mat bias = build_attention_bias<double>(5, ChunkSpec::bounded(2));
  auto params = all_params(store);
  params.push_back({"x", x});
  s.check("multi_head_attention", kDefaultThreshold,
          [&] { return s.probe(multi_head_attention(x, x, attention, 2, bias)); }, params);

  T logits = s.param(s.normal(6, 4));
  s.check("ctc_loss", kDefaultThreshold, [&] { return ctc_loss(log_softmax(logits), {1, 3, 3}); },
          {{"logits", logits}});
  T dec = s.param(s.normal(4, 5));
  s.check("att_loss", kDefaultThreshold,
          [&] { return att_loss(log_softmax(dec), {1, 4, 2, 2}, 0.1); }, {{"logits", dec}});
  T c = s.param(s.normal(6, 8)), q = s.param(s.normal(6, 8));
  ContrastiveContext ctx;
  ctx.kappa = 0.1;
  ctx.frames = {0, 2, 3, 5};
  ctx.distractors = {{1, 2}, {0, 3}, {1, 1}, {0, 2}};
  s.check("contrastive_loss", kDefaultThreshold, [&] { return contrastive_loss(c, q, ctx); },
          {{"c", c}, {"q", q}});
  T probs = s.param(Mat(s.normal(6, 8).array().exp()));
  s.check("diversity_loss", kDefaultThreshold,
          [&] { return diversity_loss(grouped_softmax(probs, 2), 2); }, {{"logits", probs}});
}

void check_full_losses(Suite& s) {
  const EncoderConfig enc = toy_encoder();
  const Mat features = s.normal(40, enc.feature_dim);
  {
    QuantizerConfig qc;
    qc.groups = 2;
    qc.entries = 4;
    qc.dim = 8;
    PretrainConfig pc;
    pc.negatives = 3;
    pc.mask_prob = 0.3;
    pc.mask_span = 2;
    pc.stop_grad = false;
    ParamStore<double> store;
    Rng rng(17);
    Encoder<double>::init_params(enc, store, rng);
    Quantizer<double>::init_params(qc, enc.d_model, store, rng);
    store.add("ssl.mask_embedding", s.normal(1, enc.d_model));
    const Encoder<double> encoder(enc, store);
    const Quantizer<double> quantizer(qc, store);
    const T embedding = store.get("ssl.mask_embedding");
    s.check("pretrain_loss", kDefaultThreshold,
            [&] {
              Rng mask_rng(23);
              return pretrain_loss(encoder, quantizer, embedding, T(features),
                                   ChunkSpec::bounded(2), pc, QuantizerMode::kSoft, 0.5, mask_rng)
                  .total;
            },
            all_params(store), 600);
  }
  {
    DecoderConfig dc;
    dc.vocab = 6;
    dc.d_model = enc.d_model;
    dc.heads = 2;
    dc.blocks = 1;
    dc.ff_expansion = 2;
    dc.dropout = 0;
    ParamStore<double> store;
    Rng rng(19);
    Encoder<double>::init_params(enc, store, rng);
    AsrHead<double>::init_params(dc, store, rng);
    const Encoder<double> encoder(enc, store);
    const AsrHead<double> head(dc, store);
    s.check("finetune_loss", kDefaultThreshold,
            [&] {
              return finetune_loss(encoder, head, T(features), {3, 4, 3}, ChunkSpec::bounded(2),
                                   FinetuneConfig{}, Branch::kBoth)
                  .total;
            },
            all_params(store), 600);
  }
}

}  // namespace

std::vector<SuiteResult> run_gradcheck_suite(std::uint64_t seed) {
  Suite s(seed);
  check_linear_algebra(s);
  check_reductions_and_indexing(s);
  check_nonlinearities(s);
  check_normalization_and_softmax(s);
  check_convolutions(s);
  check_attention_and_sequence_losses(s);
  check_full_losses(s);
  return s.take();
}

}  // namespace ufo2
