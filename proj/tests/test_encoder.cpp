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

#include "doctest.h"
#include "test_util.h"
#include "ufo2/encoder.h"
#include "ufo2/gradcheck.h"

namespace ufo2 {
namespace {

using testing::probe_sum;
using testing::random_normal;
using Mat = Matrix<double>;
using T = Tensor<double>;

EncoderConfig toy_config(Index blocks = 2) {
  EncoderConfig c;
  c.feature_dim = 11;
  c.d_model = 8;
  c.heads = 2;
  c.blocks = blocks;
  c.kernel = 3;
  c.ff_expansion = 2;
  c.subsample_channels = 2;
  c.dropout = 0.0;
  return c;
}

struct Fixture {
  EncoderConfig config;
  ParamStore<double> store;
  explicit Fixture(EncoderConfig c, std::uint64_t seed = 7) : config(c) {
    Rng rng(seed);
    Encoder<double>::init_params(config, store, rng);
  }
  Encoder<double> encoder() const { return Encoder<double>(config, store); }
};

TEST_CASE("subsample output lengths") {
  EncoderConfig c;
  CHECK(c.output_length(64) == 15);
  CHECK(c.output_length(7) == 1);
  CHECK(c.output_length(1000) == 249);
  try {
    c.output_length(6);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kLength);
  }

  Fixture f(toy_config());
  auto enc = f.encoder();
  T out = enc.subsample(T(random_normal(64, 11, 1)));
  CHECK(out.rows() == 15);
  CHECK(out.cols() == 8);
  CHECK_THROWS_AS(enc.subsample(T(random_normal(6, 11, 1))), Error);
  CHECK_THROWS_AS(enc.subsample(T(random_normal(20, 10, 1))), Error);
}

TEST_CASE("config validation") {
  EncoderConfig c = toy_config();
  c.heads = 3;
  CHECK_THROWS_AS(c.validate(), Error);
  c = toy_config();
  c.kernel = 4;
  CHECK_THROWS_AS(c.validate(), Error);
  CHECK(parse_conv_mode("causal") == ConvMode::kCausal);
  CHECK(parse_conv_mode("chunked_non_causal") == ConvMode::kChunkedNonCausal);
  CHECK_THROWS_AS(parse_conv_mode("sideways"), Error);
}

TEST_CASE("sinusoidal positional encoding") {
  Mat pe = sinusoidal_encoding<double>(3, 4);
  CHECK(pe(0, 0) == 0.0);
  CHECK(pe(0, 1) == 1.0);
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK(pe(1, 2) == doctest::Approx(std::sin(0.01)));
  CHECK(pe(2, 3) == doctest::Approx(std::cos(0.02)));
  CHECK(sinusoidal_encoding<double>(5, 4).topRows(3) == pe);

  Fixture f(toy_config());
  auto enc = f.encoder();
  CHECK(enc.positional_encode(T(Mat::Zero(6, 8))).value() ==
        sinusoidal_encoding<double>(6, 8));
  Mat x = random_normal(4, 8, 3);
  Mat expected = x * std::sqrt(8.0) + sinusoidal_encoding<double>(4, 8);
  CHECK(enc.positional_encode(T(x)).value().isApprox(expected, 1e-15));
}

AttentionParams<double> identity_attention(ParamStore<double>& store) {
  Rng rng(1);
  add_attention(store, "att", 1, rng);
  for (const char* part : {"att.q.w", "att.k.w"}) store.get(part).set_value(Mat::Zero(1, 1));
  for (const char* part : {"att.v.w", "att.out.w"}) store.get(part).set_value(Mat::Ones(1, 1));
  return AttentionParams<double>::bind(store, "att");
}

TEST_CASE("attention hand example") {
  ParamStore<double> store;
  auto params = identity_attention(store);
  Mat v(2, 1);
  v << 1, 2;
  T out = multi_head_attention(T(v), T(v), params, 1, Mat(Mat::Zero(2, 2)));
  CHECK(out.value()(0, 0) == doctest::Approx(1.5));
  CHECK(out.value()(1, 0) == doctest::Approx(1.5));

  // Chunk size 1: frame 0 sees only itself.
  out = multi_head_attention(T(v), T(v), params, 1,
                             build_attention_bias<double>(2, ChunkSpec::bounded(1)));
  CHECK(out.value()(0, 0) == 1.0);
  CHECK(out.value()(1, 0) == doctest::Approx(1.5));
}

TEST_CASE("attention with zero bias equals unmasked attention") {
  ParamStore<double> store;
  Rng rng(4);
  add_attention(store, "att", 8, rng);
  auto p = AttentionParams<double>::bind(store, "att");
  T x(random_normal(6, 8, 5));
  T masked = multi_head_attention(x, x, p, 2, Mat(Mat::Zero(6, 6)));

  // Plain reference without any bias.
  Mat q = x.value() * p.q.w.value() + p.q.b.value().replicate(6, 1);
  Mat k = x.value() * p.k.w.value() + p.k.b.value().replicate(6, 1);
  Mat vv = x.value() * p.v.w.value() + p.v.b.value().replicate(6, 1);
  Mat merged(6, 8);
  for (Index h = 0; h < 2; ++h) {
    Mat a = q.middleCols(h * 4, 4) * k.middleCols(h * 4, 4).transpose() / 2.0;
    for (Index r = 0; r < 6; ++r) {
      a.row(r) = (a.row(r).array() - a.row(r).maxCoeff()).exp();
      a.row(r) /= a.row(r).sum();
    }
    merged.middleCols(h * 4, 4) = a * vv.middleCols(h * 4, 4);
  }
  Mat expected = merged * p.out.w.value() + p.out.b.value().replicate(6, 1);
  CHECK(masked.value().isApprox(expected, 1e-12));

  // Bitwise identical to an all-zero bias built from an unbounded spec.
  T unbounded = multi_head_attention(
      x, x, p, 2, build_attention_bias<double>(6, ChunkSpec::unbounded()));
  CHECK(unbounded.value() == masked.value());
}

TEST_CASE("attention ignores frames beyond the chunk") {
  ParamStore<double> store;
  Rng rng(4);
  add_attention(store, "att", 8, rng);
  auto p = AttentionParams<double>::bind(store, "att");
  Mat x = random_normal(6, 8, 5);
  Mat bias = build_attention_bias<double>(6, ChunkSpec::bounded(2));
  T a = multi_head_attention(T(x), T(x), p, 2, bias);
  Mat y = x;
  y.row(2) = random_normal(1, 8, 6);
  y.row(5) = random_normal(1, 8, 7);
  T b = multi_head_attention(T(y), T(y), p, 2, bias);
  CHECK(a.value().topRows(2) == b.value().topRows(2));
  CHECK(a.value().row(3) != b.value().row(3));
}

TEST_CASE("conformer block unbounded equals chunk covering sequence") {
  Fixture f(toy_config());
  auto enc = f.encoder();
  T x(random_normal(9, 8, 11));
  T off = enc.conformer_block(x, ChunkSpec::unbounded(), 0, nullptr);
  CHECK(enc.conformer_block(x, ChunkSpec::bounded(9), 0, nullptr).value() == off.value());
  CHECK(enc.conformer_block(x, ChunkSpec::bounded(25), 0, nullptr).value() == off.value());
  CHECK(enc.conformer_block(x, ChunkSpec::bounded(4), 0, nullptr).value() != off.value());
}

TEST_CASE("conformer block with zero residual branches is the final norm") {
  Fixture f(toy_config(1));
  for (const auto& name : f.store.names("encoder.blocks.0.")) {
    if (name.find("norm") != std::string::npos) continue;
    T p = f.store.get(name);
    p.set_value(Mat::Zero(p.rows(), p.cols()));
  }
  f.store.get("encoder.blocks.0.final_norm.gain").set_value(random_normal(1, 8, 3));
  auto enc = f.encoder();
  T x(random_normal(7, 8, 12));
  T out = enc.conformer_block(x, ChunkSpec::bounded(2), 0, nullptr);
  T expected = layer_norm(x, f.store.get("encoder.blocks.0.final_norm.gain"),
                          f.store.get("encoder.blocks.0.final_norm.shift"));
  CHECK(out.value() == expected.value());
}

TEST_CASE("one-block encoder gradients match finite differences") {
  Fixture f(toy_config(1), 21);
  auto enc = f.encoder();
  T features = T::parameter(random_normal(19, 11, 22));
  T embedding = T::parameter(random_normal(1, 8, 23));
  SslMask mask;
  mask.masked = {false, true, true, false};
  MaskInput<double> mi{&mask, embedding};
  std::vector<NamedParam> params{{"features", features}, {"mask_embedding", embedding}};
  for (const auto& [name, p] : f.store.all()) params.push_back({name, p});
  auto program = [&] {
    auto pair = enc.encode(features, ChunkSpec::bounded(2), &mi);
    return add(probe_sum(pair.offline, 1), probe_sum(pair.online, 2));
  };
  auto report = grad_check(program, params);
  CHECK(report.max_rel_error < 1e-6);
}

TEST_CASE("online output is contained by the chunk") {
  Fixture f(toy_config(), 31);
  auto enc = f.encoder();
  Rng rng(32);
  for (int trial = 0; trial < 8; ++trial) {
    const Index frames = rng.uniform_int(20, 60);
    const Index cs = Index(1) << rng.uniform_int(0, 3);
    const ChunkSpec spec = ChunkSpec::bounded(cs);
    Mat x = random_normal(frames, 11, 100 + trial);
    T base = enc.encode(T(x), spec).online;
    const Index length = base.rows();
    for (Index t = 0; t < length; ++t) {
      const Index first_unseen = 4 * spec.chunk_end(t, length) + 7;
      if (first_unseen >= frames) continue;
      Mat y = x;
      y.bottomRows(frames - first_unseen) += random_normal(frames - first_unseen, 11, 7 + t);
      T moved = enc.encode(T(y), spec).online;
      CHECK(moved.value().row(t) == base.value().row(t));
      if (first_unseen < 4 * (length - 1) + 7) {
        CHECK(moved.value().row(length - 1) != base.value().row(length - 1));
      }
    }
  }
}

TEST_CASE("offline output sees the whole utterance") {
  Fixture f(toy_config(), 41);
  auto enc = f.encoder();
  Mat x = random_normal(40, 11, 42);
  auto base = enc.encode(T(x), ChunkSpec::bounded(1));
  Mat y = x;
  y(38, 5) += 0.5;
  auto moved = enc.encode(T(y), ChunkSpec::bounded(1));
  for (Index t = 0; t < base.length; ++t) {
    CHECK((moved.offline.value().row(t) - base.offline.value().row(t)).norm() > 0);
  }
  CHECK(moved.online.value().row(0) == base.online.value().row(0));
}

TEST_CASE("unbounded online pass equals offline pass") {
  Fixture f(toy_config(), 51);
  auto enc = f.encoder();
  T x(random_normal(33, 11, 52));
  auto pair = enc.encode(x, ChunkSpec::unbounded());
  CHECK(pair.online.value() == pair.offline.value());
  auto big = enc.encode(x, ChunkSpec::bounded(pair.length));
  CHECK(big.online.value() == big.offline.value());
  CHECK(enc.encode_single(x, ChunkSpec::unbounded()).value() == pair.offline.value());
}

TEST_CASE("causal convolution mode reads no future frames") {
  EncoderConfig c = toy_config(1);
  for (ConvMode mode : {ConvMode::kCausal, ConvMode::kChunkedNonCausal}) {
    c.conv_mode = mode;
    Fixture f(c, 61);
    // Silence the attention branch so only the convolution mixes frames.
    f.store.get("encoder.blocks.0.mhsa.out.w").set_value(Mat::Zero(8, 8));
    auto enc = f.encoder();
    Mat x = random_normal(10, 8, 62);
    T base = enc.context(T(x), ChunkSpec::unbounded(), nullptr);
    Mat y = x;
    y.row(6) += random_normal(1, 8, 63);
    T moved = enc.context(T(y), ChunkSpec::unbounded(), nullptr);
    if (mode == ConvMode::kCausal) {
      CHECK(moved.value().topRows(6) == base.value().topRows(6));
    } else {
      CHECK(moved.value().row(5) != base.value().row(5));
      CHECK(moved.value().topRows(5) == base.value().topRows(5));
    }
  }
}

TEST_CASE("masking replaces subsampled frames with the embedding") {
  Fixture f(toy_config(), 71);
  Rng rng(72);
  T embedding = T::parameter(random_normal(1, 8, 73));
  auto enc = f.encoder();
  T x(random_normal(40, 11, 74));
  SslMask mask = sample_ssl_mask(9, 0.3, 2, rng);
  MaskInput<double> mi{&mask, embedding};
  auto plain = enc.encode(x, ChunkSpec::bounded(2));
  auto masked = enc.encode(x, ChunkSpec::bounded(2), &mi);
  CHECK(masked.features.value() == plain.features.value());
  CHECK(masked.offline.value() != plain.offline.value());

  // Masked frames carry no trace of the input content.
  Mat x2 = x.value();
  auto masked_enc = enc.subsample(x);
  CHECK(masked_enc.value() == plain.features.value());
  MaskInput<double> all_masked;
  SslMask everything;
  everything.masked.assign(9, true);
  all_masked = {&everything, embedding};
  x2.array() += 1.0;
  auto a = enc.encode(x, ChunkSpec::bounded(3), &all_masked);
  auto b = enc.encode(T(x2), ChunkSpec::bounded(3), &all_masked);
  CHECK(a.online.value() == b.online.value());
}

TEST_CASE("both modes share one parameter store") {
  Fixture f(toy_config(), 81);
  auto enc = f.encoder();
  T x(random_normal(30, 11, 82));
  auto before = enc.encode(x, ChunkSpec::bounded(2));
  const auto names = f.store.names("encoder.blocks.1.ff2.in.w");
  REQUIRE(names.size() == 1);
  T w = f.store.get(names[0]);

  // One gradient step on a shared weight changes both passes.
  {
    Graph<double> graph;
    auto pair = enc.encode(x, ChunkSpec::bounded(2));
    f.store.zero_grad();
    graph.backward(add(probe_sum(pair.offline, 1), probe_sum(pair.online, 2)));
  }
  w.set_value(w.value() - 0.1 * w.grad());
  auto after = enc.encode(x, ChunkSpec::bounded(2));
  CHECK(after.offline.value() != before.offline.value());
  CHECK(after.online.value() != before.online.value());
  CHECK(Encoder<double>(f.config, f.store).encode(x, ChunkSpec::bounded(2)).online.value() ==
        after.online.value());
}

TEST_CASE("dropout is identity without an rng and active with one") {
  EncoderConfig c = toy_config();
  c.dropout = 0.3;
  Fixture f(c, 91);
  auto enc = f.encoder();
  T x(random_normal(30, 11, 92));
  auto a = enc.encode(x, ChunkSpec::bounded(2));
  auto b = enc.encode(x, ChunkSpec::bounded(2));
  CHECK(a.online.value() == b.online.value());
  Rng rng(93);
  auto c2 = enc.encode(x, ChunkSpec::bounded(2), nullptr, &rng);
  CHECK(c2.online.value() != a.online.value());
}

}  // namespace
}  // namespace ufo2
