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
#include "ufo2/asr.h"
#include "ufo2/gradcheck.h"

namespace ufo2 {
namespace {

using testing::collapse;
using testing::log_softmax_rows;
using testing::path_sums;
using testing::probe_sum;
using testing::random_normal;
using Mat = Matrix<double>;
using T = Tensor<double>;

TEST_CASE("ctc loss hand examples") {
  Mat one(1, 3);
  one << std::log(0.2), std::log(0.5), std::log(0.3);
  CHECK(ctc_loss(T(one), {1}).item() == doctest::Approx(-std::log(0.5)));

  Mat uniform = Mat::Constant(2, 2, std::log(0.5));
  CHECK(ctc_loss(T(uniform), {1}).item() == doctest::Approx(-std::log(0.75)));
  CHECK(ctc_loss(T(uniform), {1}).item() == doctest::Approx(0.2877).epsilon(1e-4));

  CHECK(ctc_loss(T(uniform), {}).item() == doctest::Approx(-2 * std::log(0.5)));
}

TEST_CASE("ctc loss rejects infeasible labels") {
  Mat lp = log_softmax_rows(random_normal(3, 4, 1));
  try {
    ctc_loss(T(lp), {1, 1, 2});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kInfeasibleAlignment);
  }
  CHECK_THROWS_AS(ctc_loss(T(lp), {1, 2, 3, 1}), Error);
  CHECK_NOTHROW(ctc_loss(T(lp), {1, 2, 1}));
  CHECK_THROWS_AS(ctc_loss(T(lp), {0}), Error);
  CHECK_THROWS_AS(ctc_loss(T(lp), {4}), Error);
  CHECK(ctc_min_frames({1, 1, 2, 2, 2}) == 8);
}

TEST_CASE("ctc loss equals exhaustive path sum") {
  Rng rng(2);
  int checked = 0;
  while (checked < 60) {
    const Index frames = rng.uniform_int(1, 6);
    const Index vocab = rng.uniform_int(2, 4);
    TokenIds labels(rng.uniform_int(0, 3));
    for (auto& l : labels) l = rng.uniform_int(1, vocab - 1);
    if (ctc_min_frames(labels) > frames) continue;
    Mat lp = log_softmax_rows(random_normal(frames, vocab, 100 + checked, 1.5));
    const double oracle = -std::log(path_sums(lp)[labels]);
    CHECK(std::abs(ctc_loss(T(lp), labels).item() - oracle) < 1e-9);
    ++checked;
  }
}

TEST_CASE("ctc gradient matches finite differences") {
  T logits = T::parameter(random_normal(6, 4, 3));
  auto report =
      grad_check([&] { return ctc_loss(log_softmax(logits), {1, 2, 2}); }, {{"logits", logits}});
  CHECK(report.max_rel_error < 1e-7);
  T loose = T::parameter(random_normal(5, 3, 4));
  report = grad_check([&] { return ctc_loss(loose, {2, 1}); }, {{"raw", loose}});
  CHECK(report.max_rel_error < 1e-7);
}

TEST_CASE("ctc loss in 32-bit agrees with 64-bit") {
  Mat lp = log_softmax_rows(random_normal(30, 6, 5));
  const double d = ctc_loss(T(lp), {1, 3, 5, 2}).item();
  const float f = ctc_loss(Tensor<float>(lp.cast<float>()), {1, 3, 5, 2}).item();
  CHECK(f == doctest::Approx(d).epsilon(1e-5));
}

DecoderConfig toy_decoder(Index vocab = 7) {
  DecoderConfig c;
  c.vocab = vocab;
  c.d_model = 8;
  c.heads = 2;
  c.blocks = 2;
  c.ff_expansion = 2;
  c.dropout = 0.0;
  return c;
}

TEST_CASE("decoder output rows are log distributions and causal") {
  ParamStore<double> store;
  Rng rng(6);
  Decoder<double>::init_params(toy_decoder(), store, rng);
  Decoder<double> decoder(toy_decoder(), store);
  T context(random_normal(5, 8, 7));
  T a = decoder.forward(context, {kSosEosId, 3, 4, 5});
  CHECK(a.rows() == 4);
  CHECK(a.cols() == 7);
  for (Index r = 0; r < 4; ++r) {
    CHECK(a.value().row(r).array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
  }
  T b = decoder.forward(context, {kSosEosId, 3, 6, 6});
  CHECK(a.value().topRows(2) == b.value().topRows(2));
  CHECK(a.value().row(2) != b.value().row(2));

  CHECK(decoder.sequence_log_prob(context, {3, 4}) ==
        doctest::Approx(a.value()(0, 3) + a.value()(1, 4) +
                        decoder.forward(context, {kSosEosId, 3, 4}).value()(2, kSosEosId)));
  CHECK_THROWS_AS(decoder.forward(context, {kSosEosId, 9}), Error);
}

TEST_CASE("decoder gradients match finite differences") {
  ParamStore<double> store;
  Rng rng(8);
  Decoder<double>::init_params(toy_decoder(), store, rng);
  Decoder<double> decoder(toy_decoder(), store);
  T context = T::parameter(random_normal(4, 8, 9));
  std::vector<NamedParam> params{{"context", context}};
  for (const auto& [name, p] : store.all()) params.push_back({name, p});
  auto report = grad_check(
      [&] { return probe_sum(decoder.forward(context, {kSosEosId, 3, 5})); }, params);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("attention loss closed forms") {
  Mat perfect = Mat::Constant(2, 4, -1e30);
  perfect(0, 1) = 0;
  perfect(1, 3) = 0;
  CHECK(att_loss(T(perfect), {1, 3}, 0.0).item() == 0.0);

  Mat uniform = Mat::Constant(3, 5, -std::log(5.0));
  CHECK(att_loss(T(uniform), {1, 2, 4}, 0.0).item() == doctest::Approx(std::log(5.0)));
  CHECK(att_loss(T(uniform), {1, 2, 4}, 0.1).item() == doctest::Approx(std::log(5.0)));

  Mat lp = log_softmax_rows(random_normal(3, 5, 10));
  const TokenIds targets{4, 0, 2};
  double ce = 0, spread = 0;
  for (Index u = 0; u < 3; ++u) {
    ce -= lp(u, targets[u]) / 3;
    spread -= lp.row(u).mean() / 3;
  }
  CHECK(att_loss(T(lp), targets, 0.1).item() == doctest::Approx(0.9 * ce + 0.1 * spread));
  CHECK_THROWS_AS(att_loss(T(lp), {1, 2}, 0.1), Error);
}

TEST_CASE("hybrid loss weights") {
  T ctc = T::scalar(1.0), att = T::scalar(2.0);
  CHECK(hybrid_loss(ctc, att, 0.3).item() == doctest::Approx(1.7));
  CHECK(hybrid_loss(ctc, att, 1.0).item() == 1.0);
  CHECK(hybrid_loss(ctc, att, 0.0).item() == 2.0);
  try {
    hybrid_loss(ctc, att, 1.5);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfiguration);
  }
}

struct FinetuneFixture {
  EncoderConfig enc;
  DecoderConfig dec = toy_decoder();
  ParamStore<double> store;
  FinetuneFixture() {
    enc.feature_dim = 11;
    enc.d_model = 8;
    enc.heads = 2;
    enc.blocks = 1;
    enc.kernel = 3;
    enc.ff_expansion = 2;
    enc.subsample_channels = 2;
    enc.dropout = 0;
    Rng rng(11);
    Encoder<double>::init_params(enc, store, rng);
    AsrHead<double>::init_params(dec, store, rng);
  }
  FinetuneLosses<double> run(const T& x, const FinetuneConfig& c, Branch branch) const {
    Encoder<double> encoder(enc, store);
    AsrHead<double> head(dec, store);
    return finetune_loss(encoder, head, x, {3, 4, 3}, ChunkSpec::bounded(2), c, branch);
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

TEST_CASE("fine-tuning loss combines modes with alpha") {
  FinetuneFixture f;
  T x(random_normal(40, 11, 12));
  FinetuneConfig c;
  auto l = f.run(x, c, Branch::kBoth);
  REQUIRE(l.offline.has_value());
  REQUIRE(l.online.has_value());
  CHECK(l.offline->hybrid.item() ==
        doctest::Approx(0.3 * l.offline->ctc.item() + 0.7 * l.offline->att.item()));
  CHECK(l.total.item() ==
        doctest::Approx(0.75 * l.offline->hybrid.item() + 0.25 * l.online->hybrid.item()));
  CHECK(weighted_sum<double>({T::scalar(1.0), T::scalar(2.0)}, {0.75, 0.25}).item() == 1.25);
  c.alpha = 0.5;
  auto half = f.run(x, c, Branch::kBoth);
  CHECK(half.total.item() ==
        doctest::Approx((half.offline->hybrid.item() + half.online->hybrid.item()) / 2));

  auto off = f.run(x, c, Branch::kOffline);
  CHECK(!off.online.has_value());
  CHECK(off.total.item() == doctest::Approx(l.offline->hybrid.item()).epsilon(1e-12));
  auto on = f.run(x, c, Branch::kOnline);
  CHECK(!on.offline.has_value());
  CHECK(on.total.item() == doctest::Approx(l.online->hybrid.item()).epsilon(1e-12));
}

TEST_CASE("alpha at the extremes silences one mode") {
  FinetuneFixture f;
  T x(random_normal(40, 11, 13));
  FinetuneConfig c;
  c.alpha = 1.0;
  auto joint = f.grads([&] { return f.run(x, c, Branch::kBoth).total; });
  auto offline_only = f.grads([&] { return f.run(x, c, Branch::kOffline).total; });
  for (const auto& [name, g] : joint) {
    CAPTURE(name);
    CHECK(g.isApprox(offline_only[name], 1e-12));
  }
  c.alpha = 0.0;
  joint = f.grads([&] { return f.run(x, c, Branch::kBoth).total; });
  auto online_only = f.grads([&] { return f.run(x, c, Branch::kOnline).total; });
  for (const auto& [name, g] : joint) {
    CAPTURE(name);
    CHECK(g.isApprox(online_only[name], 1e-12));
  }
}

TEST_CASE("fine-tuning loss gradient matches finite differences") {
  FinetuneFixture f;
  T x(random_normal(30, 11, 14));
  FinetuneConfig c;
  std::vector<NamedParam> params;
  for (const auto& [name, p] : f.store.all()) params.push_back({name, p});
  auto report = grad_check([&] { return f.run(x, c, Branch::kBoth).total; }, params, 1e-5, 400);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("prefix beam search basics") {
  Mat blank_first(1, 3);
  blank_first << std::log(0.6), std::log(0.3), std::log(0.1);
  auto hyps = ctc_prefix_beam_search(blank_first, 10);
  REQUIRE(hyps.size() == 3);
  CHECK(hyps[0].tokens.empty());
  CHECK(hyps[0].ctc_log_score == doctest::Approx(std::log(0.6)));
  CHECK_THROWS_AS(ctc_prefix_beam_search(blank_first, 0), Error);

  // One path dominates every frame: beam 1 returns its collapse.
  Rng rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const Index frames = rng.uniform_int(1, 12);
    Mat p = Mat::Constant(frames, 5, 0.01);
    TokenIds path(frames);
    for (Index t = 0; t < frames; ++t) {
      path[t] = rng.uniform_int(0, 4);
      p(t, path[t]) = 0.96;
    }
    Mat lp = p.array().log();
    auto best = ctc_prefix_beam_search(lp, 1);
    REQUIRE(best.size() == 1);
    CHECK(best[0].tokens == collapse(path));
  }
}

TEST_CASE("prefix beam search matches exact prefix marginals") {
  Rng rng(16);
  for (int trial = 0; trial < 40; ++trial) {
    const Index frames = rng.uniform_int(1, 4);
    const Index vocab = rng.uniform_int(2, 3);
    Mat lp = log_softmax_rows(random_normal(frames, vocab, 200 + trial, 2.0));
    auto sums = path_sums(lp);
    auto best = std::max_element(sums.begin(), sums.end(),
                                 [](const auto& a, const auto& b) { return a.second < b.second; });
    auto hyps = ctc_prefix_beam_search(lp, 1000);
    CHECK(hyps.size() == sums.size());
    CHECK(hyps[0].tokens == best->first);
    for (const auto& h : hyps) CHECK(std::exp(h.ctc_log_score) == doctest::Approx(sums[h.tokens]));
  }
}

TEST_CASE("rescoring combination") {
  std::vector<Hypothesis> hyps(2);
  hyps[0].tokens = {3};
  hyps[0].ctc_log_score = -1;
  hyps[0].att_log_score = -5;
  hyps[1].tokens = {4};
  hyps[1].ctc_log_score = -2;
  hyps[1].att_log_score = -1;
  rank_by_combined(hyps, 0.3);
  CHECK(hyps[0].tokens == TokenIds{4});
  CHECK(*hyps[0].combined == doctest::Approx(-1.3));
  CHECK(*hyps[1].combined == doctest::Approx(0.3 * -1 + 0.7 * -5));

  rank_by_combined(hyps, 1.0);
  CHECK(hyps[0].tokens == TokenIds{3});

  ParamStore<double> store;
  Rng rng(17);
  Decoder<double>::init_params(toy_decoder(), store, rng);
  Decoder<double> decoder(toy_decoder(), store);
  T context(random_normal(4, 8, 18));
  std::vector<Hypothesis> single(1);
  single[0].tokens = {5, 6};
  single[0].ctc_log_score = -3;
  auto out = attention_rescore(single, context, decoder, 0.3);
  REQUIRE(out.size() == 1);
  CHECK(out[0].tokens == single[0].tokens);
  CHECK(*out[0].att_log_score == doctest::Approx(decoder.sequence_log_prob(context, {5, 6})));
  CHECK(*out[0].att_log_score < 0);
}

TEST_CASE("word error rate") {
  CHECK(wer(split_words("a b c"), split_words("a b c")) == 0.0);
  CHECK(wer(split_words("a b c"), split_words("a x c d")) == doctest::Approx(2.0 / 3.0));
  CHECK(wer(split_words("a b c"), {}) == 1.0);
  try {
    wer({}, split_words("a"));
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kUndefinedMetric);
  }
  CHECK(edit_distance<int>({1, 2, 3, 4}, {2, 3, 4, 5}) == 2);
  CHECK(split_words("  hello   world ") == std::vector<std::string>{"hello", "world"});
}

}  // namespace
}  // namespace ufo2
