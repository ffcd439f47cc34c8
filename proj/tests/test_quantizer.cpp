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

#include <cmath>
#include <functional>
#include <map>

#include "doctest.h"
#include "test_util.h"
#include "ufo2/gradcheck.h"
#include "ufo2/quantizer.h"

namespace ufo2 {
namespace {

using testing::probe_sum;
using testing::random_normal;
using Mat = Matrix<double>;
using T = Tensor<double>;

QuantizerConfig toy_quantizer() {
  QuantizerConfig c;
  c.groups = 2;
  c.entries = 4;
  c.dim = 6;
  return c;
}

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

// Context with every masked frame using all other masked frames once.
ContrastiveContext all_others(Index m, double kappa = 0.1) {
  ContrastiveContext ctx;
  ctx.kappa = kappa;
  for (Index i = 0; i < m; ++i) {
    ctx.frames.push_back(i);
    std::vector<Index> d;
    for (Index j = 0; j < m; ++j) {
      if (j != i) d.push_back(j);
    }
    ctx.distractors.push_back(d);
  }
  return ctx;
}

TEST_CASE("argmax quantization picks the best entry per group") {
  ParamStore<double> store;
  Rng rng(1);
  QuantizerConfig c = toy_quantizer();
  Quantizer<double>::init_params(c, 8, store, rng);
  Quantizer<double> quantizer(c, store);
  T e(random_normal(5, 8, 2));
  auto out = quantizer.quantize(e, 0.5, QuantizerMode::kArgmax);
  CHECK(out.q.rows() == 5);
  CHECK(out.q.cols() == 8);

  Mat normed = e.value();
  for (Index t = 0; t < 5; ++t) {
    double mean = normed.row(t).mean();
    double var = (normed.row(t).array() - mean).square().mean();
    normed.row(t) = ((normed.row(t).array() - mean) / std::sqrt(var + 1e-5)).matrix();
  }
  normed = (normed.array().rowwise() * store.get("quantizer.norm.gain").value().row(0).array())
               .matrix() +
           store.get("quantizer.norm.shift").value().replicate(5, 1);
  Mat logits = normed * store.get("quantizer.logits.w").value() +
               store.get("quantizer.logits.b").value().replicate(5, 1);
  const Mat& entries = store.get("quantizer.entries").value();
  Mat codes(5, 6);
  for (Index t = 0; t < 5; ++t) {
    for (Index g = 0; g < 2; ++g) {
      Index best;
      logits.row(t).segment(g * 4, 4).maxCoeff(&best);
      CHECK(out.selection.value()(t, g * 4 + best) == 1.0);
      CHECK(out.selection.value().row(t).segment(g * 4, 4).sum() == 1.0);
      codes.block(t, g * 3, 1, 3) = entries.row(g * 4 + best);
    }
  }
  Mat expected = codes * store.get("quantizer.out.w").value() +
                 store.get("quantizer.out.b").value().replicate(5, 1);
  CHECK(out.q.value().isApprox(expected, 1e-14));

  Rng noise(3);
  auto sampled = quantizer.quantize(e, 0.5, QuantizerMode::kGumbel, &noise);
  CHECK(sampled.q.cols() == 8);
  CHECK_THROWS_AS(quantizer.quantize(e, 0.5, QuantizerMode::kGumbel), Error);
}

TEST_CASE("soft quantizer gradients match finite differences") {
  ParamStore<double> store;
  Rng rng(4);
  QuantizerConfig c = toy_quantizer();
  Quantizer<double>::init_params(c, 8, store, rng);
  Quantizer<double> quantizer(c, store);
  T e = T::parameter(random_normal(5, 8, 5));
  std::vector<NamedParam> params{{"e", e}};
  for (const auto& [name, p] : store.all()) params.push_back({name, p});
  auto report = grad_check(
      [&] { return probe_sum(quantizer.quantize(e, 0.7, QuantizerMode::kSoft).q); }, params);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("straight-through gradient equals soft-path gradient") {
  ParamStore<double> store;
  Rng rng(6);
  QuantizerConfig c = toy_quantizer();
  Quantizer<double>::init_params(c, 8, store, rng);
  Quantizer<double> quantizer(c, store);
  T e(random_normal(4, 8, 7));
  T logits_w = store.get("quantizer.logits.w");

  // Through the selection only: d(probe . selection) is the same softmax
  // Jacobian in both modes.
  auto grad_of = [&](QuantizerMode mode) {
    store.zero_grad();
    Graph<double> graph;
    graph.backward(probe_sum(quantizer.quantize(e, 0.5, mode).selection));
    return Mat(logits_w.grad());
  };
  CHECK(grad_of(QuantizerMode::kArgmax).isApprox(grad_of(QuantizerMode::kSoft), 1e-12));
}

TEST_CASE("diversity loss examples") {
  Mat uniform = Mat::Constant(3, 8, 0.25);
  CHECK(std::abs(diversity_loss(T(uniform), 2).item()) < 1e-6);

  Mat collapsed = Mat::Zero(3, 8);
  collapsed.col(1).setOnes();
  collapsed.col(6).setOnes();
  CHECK(diversity_loss(T(collapsed), 2).item() == doctest::Approx(0.75).epsilon(1e-6));

  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    T p = grouped_softmax(T(random_normal(6, 8, 100 + i, 3.0)), 2);
    CHECK(diversity_loss(p, 2).item() >= -1e-9);
  }
}

TEST_CASE("contrastive loss closed forms") {
  ContrastiveContext lone;
  lone.frames = {0};
  lone.distractors = {{}};
  CHECK(contrastive_loss(T(random_normal(1, 4, 1)), T(random_normal(1, 4, 2)), lone).item() ==
        0.0);

  Mat c(2, 2);
  c << 1, 0, 0, 1;
  const double loss = contrastive_loss(T(c), T(c), all_others(2)).item();
  CHECK(loss == doctest::Approx(std::log1p(std::exp(-10.0))).epsilon(1e-9));
  CHECK(loss == doctest::Approx(4.54e-5).epsilon(1e-3));

  Mat same = Mat::Ones(2, 3);
  CHECK(contrastive_loss(T(same), T(same), all_others(2)).item() ==
        doctest::Approx(std::log(2.0)));
}

TEST_CASE("contrastive loss is invariant to rescaling a target") {
  Mat c = random_normal(5, 6, 9);
  Mat q = random_normal(5, 6, 10);
  auto ctx = all_others(5);
  const double base = contrastive_loss(T(c), T(q), ctx).item();
  Mat scaled = q;
  scaled.row(2) *= 7.0;
  CHECK(contrastive_loss(T(c), T(scaled), ctx).item() == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("contrastive loss gradients and degenerate input") {
  T c = T::parameter(random_normal(6, 5, 11));
  T q = T::parameter(random_normal(6, 5, 12));
  Rng rng(13);
  SslMask mask;
  mask.masked = {true, false, true, true, false, true};
  auto ctx = sample_contrastive(mask, 3, 0.5, rng);
  auto report = grad_check([&] { return contrastive_loss(c, q, ctx); }, {{"c", c}, {"q", q}});
  CHECK(report.max_rel_error < 1e-6);

  Mat zero = random_normal(6, 5, 14);
  zero.row(2).setZero();
  try {
    contrastive_loss(T(zero), q, ctx);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kNumericalDegeneracy);
  }
}

TEST_CASE("distractors come from other masked frames") {
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    SslMask mask = sample_ssl_mask(40, 0.1, 4, rng);
    auto ctx = sample_contrastive(mask, 10, 0.1, rng);
    REQUIRE(ctx.frames == mask.masked_indices());
    const Index m = static_cast<Index>(ctx.frames.size());
    for (Index i = 0; i < m; ++i) {
      CHECK(ctx.distractors[i].size() == (m > 1 ? 10u : 0u));
      for (Index j : ctx.distractors[i]) {
        CHECK(j != i);
        CHECK(j >= 0);
        CHECK(j < m);
      }
    }
  }
}

TEST_CASE("temperature anneal") {
  QuantizerConfig c;
  CHECK(c.temperature_at(0) == 0.5);
  CHECK(c.temperature_at(1000) == 0.5);
  c.temperature = 2.0;
  c.temperature_end = 0.5;
  c.anneal_steps = 100;
  CHECK(c.temperature_at(0) == 2.0);
  CHECK(c.temperature_at(50) == doctest::Approx(1.25));
  CHECK(c.temperature_at(100) == 0.5);
  CHECK(c.temperature_at(500) == 0.5);
  c.temperature = 0;
  CHECK_THROWS_AS(c.validate(), Error);
}

struct PretrainFixture {
  EncoderConfig enc_config = toy_encoder();
  QuantizerConfig q_config = toy_quantizer();
  ParamStore<double> store;
  T mask_embedding;
  PretrainFixture() {
    Rng rng(21);
    Encoder<double>::init_params(enc_config, store, rng);
    Quantizer<double>::init_params(q_config, enc_config.d_model, store, rng);
    mask_embedding = store.add("ssl.mask_embedding", random_normal(1, 8, 22));
  }
  PretrainLosses<double> run(const T& features, const PretrainConfig& config,
                             QuantizerMode mode, std::uint64_t seed = 23) const {
    Encoder<double> encoder(enc_config, store);
    Quantizer<double> quantizer(q_config, store);
    Rng rng(seed);
    return pretrain_loss(encoder, quantizer, mask_embedding, features, ChunkSpec::bounded(2),
                         config, mode, 0.5, rng);
  }
  std::map<std::string, Mat> grads(const std::function<T()>& loss) {
    store.zero_grad();
    Graph<double> graph;
    graph.backward(loss());
    std::map<std::string, Mat> out;
    for (const auto& [name, p] : store.all()) out[name] = p.grad();
    return out;
  }
};

PretrainConfig toy_pretrain() {
  PretrainConfig c;
  c.negatives = 3;
  c.mask_prob = 0.3;
  c.mask_span = 2;
  return c;
}

TEST_CASE("pretrain loss combines terms with lambda") {
  PretrainFixture f;
  T features(random_normal(40, 11, 24));
  PretrainConfig config = toy_pretrain();
  auto losses = f.run(features, config, QuantizerMode::kGumbel);
  const double expected = 0.5 * losses.offline.item() + 0.5 * losses.online.item() +
                          0.1 * losses.diversity.item();
  CHECK(losses.total.item() == doctest::Approx(expected).epsilon(1e-12));

  PretrainLosses<double> fixed;
  fixed.offline = T::scalar(2.0);
  fixed.online = T::scalar(3.0);
  config.diversity_weight = 0;
  CHECK(weighted_sum<double>({fixed.offline, fixed.online}, {0.5, 0.5}).item() == 2.5);
}

TEST_CASE("stop-gradient keeps the online term away from the quantizer") {
  PretrainFixture f;
  T features(random_normal(40, 11, 25));
  PretrainConfig config = toy_pretrain();
  for (bool stop : {true, false}) {
    config.stop_grad = stop;
    auto online = f.grads([&] { return f.run(features, config, QuantizerMode::kGumbel).online; });
    auto offline =
        f.grads([&] { return f.run(features, config, QuantizerMode::kGumbel).offline; });
    for (const std::string name : {"quantizer.entries", "quantizer.logits.w", "quantizer.out.w",
                                   "quantizer.out.b"}) {
      CAPTURE(name);
      CHECK(offline[name].norm() > 0);
      if (stop) {
        CHECK(online[name].norm() == 0.0);
      } else {
        CHECK(online[name].norm() > 0);
      }
    }
    CHECK(online["encoder.blocks.0.mhsa.q.w"].norm() > 0);
  }

  // With stop-grad, the total's codebook gradient is exactly that of
  // lambda * offline + w * diversity.
  config.stop_grad = true;
  auto total = f.grads([&] { return f.run(features, config, QuantizerMode::kGumbel).total; });
  auto partial = f.grads([&] {
    auto l = f.run(features, config, QuantizerMode::kGumbel);
    return weighted_sum<double>({l.offline, l.diversity}, {config.lambda, config.diversity_weight});
  });
  CHECK(total["quantizer.entries"] == partial["quantizer.entries"]);

  // lambda = 1 drops the online term entirely.
  config.lambda = 1.0;
  config.stop_grad = false;
  auto only_offline =
      f.grads([&] { return f.run(features, config, QuantizerMode::kGumbel).total; });
  auto reference = f.grads([&] {
    auto l = f.run(features, config, QuantizerMode::kGumbel);
    return weighted_sum<double>({l.offline, l.diversity}, {1.0, config.diversity_weight});
  });
  CHECK(only_offline["quantizer.entries"] == reference["quantizer.entries"]);
}

TEST_CASE("full pretrain loss gradient in soft quantizer mode") {
  PretrainFixture f;
  T features(random_normal(30, 11, 26));
  PretrainConfig config = toy_pretrain();
  config.stop_grad = false;
  std::vector<NamedParam> params;
  for (const auto& [name, p] : f.store.all()) params.push_back({name, p});
  auto report =
      grad_check([&] { return f.run(features, config, QuantizerMode::kSoft).total; }, params);
  CHECK(report.max_rel_error < 1e-6);
  CHECK(std::isfinite(f.run(features, config, QuantizerMode::kSoft).total.item()));
}

}  // namespace
}  // namespace ufo2
