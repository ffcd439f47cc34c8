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
#include <limits>
#include <random>

#include "doctest.h"
#include "ufo2/gradcheck.h"
#include "ufo2/ops.h"
#include "ufo2/rng.h"

namespace ufo2 {
namespace {

using Mat = Matrix<double>;
using T = Tensor<double>;
constexpr double kInf = std::numeric_limits<double>::infinity();

Mat random_matrix(Index r, Index c, std::uint64_t seed) {
  Rng rng(seed);
  Mat m(r, c);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Weighted sum with fixed random weights turns any tensor into a scalar
// whose gradient probes every output element.
T probe(const T& y, std::uint64_t seed = 99) {
  return sum(cwise_product(y, T(random_matrix(y.rows(), y.cols(), seed))));
}

double check(const std::function<T()>& f, std::vector<NamedParam> params) {
  return grad_check(f, params).max_rel_error;
}

TEST_CASE("matmul forward values") {
  Mat m(2, 2);
  m << 5, -1, 2.5, 7;
  T eye(Mat::Identity(2, 2));
  CHECK(matmul(eye, T(m)).value() == m);

  Mat a(2, 2), b(2, 1), expected(2, 1);
  a << 1, 2, 3, 4;
  b << 1, 1;
  expected << 3, 7;
  CHECK(matmul(T(a), T(b)).value() == expected);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  T a(Mat::Zero(2, 3)), b(Mat::Zero(2, 3));
  try {
    matmul(a, b);
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kDimension);
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradients match finite differences") {
  T a = T::parameter(random_matrix(4, 5, 1));
  T b = T::parameter(random_matrix(5, 3, 2));
  CHECK(check([&] { return probe(matmul(a, b)); }, {{"a", a}, {"b", b}}) < 1e-6);
  T c = T::parameter(random_matrix(3, 5, 3));
  CHECK(check([&] { return probe(matmul_transposed(a, c)); },
              {{"a", a}, {"c", c}}) < 1e-6);
}

TEST_CASE("masked_softmax examples") {
  Mat bias(1, 2);
  bias << 0, -kInf;
  T y = masked_softmax(T(Mat::Zero(1, 2)), bias);
  CHECK(y.value()(0, 0) == 1.0);
  CHECK(y.value()(0, 1) == 0.0);

  T u = masked_softmax(T(Mat::Zero(1, 3)), Mat(Mat::Zero(1, 3)));
  for (Index j = 0; j < 3; ++j) CHECK(u.value()(0, j) == doctest::Approx(1.0 / 3));

  Mat logits(1, 3), b3(1, 3);
  logits << 1, 2, 3;
  b3 << 0, 0, -kInf;
  T z = masked_softmax(T(logits), b3);
  const double e = std::exp(1.0);
  CHECK(z.value()(0, 0) == doctest::Approx(1 / (1 + e)).epsilon(1e-12));
  CHECK(z.value()(0, 1) == doctest::Approx(e / (1 + e)).epsilon(1e-12));
  CHECK(z.value()(0, 2) == 0.0);
}

TEST_CASE("masked_softmax rejects an all-masked row") {
  Mat bias = Mat::Constant(2, 2, -kInf);
  bias(0, 0) = 0;
  CHECK_THROWS_AS(masked_softmax(T(Mat::Zero(2, 2)), bias), Error);
}

TEST_CASE("masked_softmax rows sum to one and masked entries get no gradient") {
  Mat bias = Mat::Zero(5, 5);
  for (Index i = 0; i < 5; ++i)
    for (Index j = i + 1; j < 5; ++j) bias(i, j) = -kInf;
  T logits = T::parameter(random_matrix(5, 5, 4));
  T y = masked_softmax(logits, bias);
  for (Index i = 0; i < 5; ++i) {
    CHECK(std::abs(y.value().row(i).sum() - 1.0) < 1e-6);
    for (Index j = i + 1; j < 5; ++j) CHECK(y.value()(i, j) == 0.0);
  }
  auto report = grad_check([&] { return probe(masked_softmax(logits, bias)); },
                           {{"logits", logits}});
  CHECK(report.max_rel_error < 1e-6);
  for (const auto& entry : report.entries) {
    const Index i = entry.index / 5, j = entry.index % 5;
    if (j > i) {
      CHECK(entry.analytic == 0.0);
      CHECK(entry.numeric == 0.0);
    }
  }
}

TEST_CASE("conv1d hand example with chunk validity") {
  T x(Mat::Ones(4, 1));
  T kernel(Mat::Ones(3, 1));
  T chunked = conv1d(x, kernel, Validity{1, 1, 3, 3});
  CHECK(chunked.value()(1, 0) == 2.0);
  T offline = conv1d(x, kernel, Validity{3, 3, 3, 3});
  CHECK(offline.value()(1, 0) == 3.0);
  CHECK(conv1d(x, T(Mat::Zero(3, 1)), Validity{3, 3, 3, 3}).value().isZero());
}

TEST_CASE("conv1d with full validity is plain zero-padded convolution") {
  const Index length = 7, din = 3, dout = 2, k = 5;
  Mat xv = random_matrix(length, din, 5);
  Mat kv = random_matrix(k * din, dout, 6);
  Mat expected = Mat::Zero(length, dout);
  for (Index t = 0; t < length; ++t)
    for (Index j = 0; j < k; ++j) {
      const Index p = t + j - (k - 1) / 2;
      if (p < 0 || p >= length) continue;
      for (Index c = 0; c < din; ++c)
        for (Index o = 0; o < dout; ++o) expected(t, o) += kv(j * din + c, o) * xv(p, c);
    }
  T y = conv1d(T(xv), T(kv), Validity(length, length - 1));
  CHECK((y.value() - expected).cwiseAbs().maxCoeff() < 1e-12);

  // depthwise uses the same tap layout per channel
  Mat dk = random_matrix(k, din, 7);
  Mat dexp = Mat::Zero(length, din);
  for (Index t = 0; t < length; ++t)
    for (Index j = 0; j < k; ++j) {
      const Index p = t + j - (k - 1) / 2;
      if (p >= 0 && p < length) dexp.row(t) += dk.row(j).cwiseProduct(xv.row(p));
    }
  T dy = depthwise_conv1d(T(xv), T(dk), Validity(length, length - 1));
  CHECK((dy.value() - dexp).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("conv1d rejects even kernels") {
  T x(Mat::Ones(4, 1));
  try {
    depthwise_conv1d(x, T(Mat::Ones(4, 1)), Validity{3, 3, 3, 3});
    FAIL("expected throw");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::kConfiguration);
  }
}

TEST_CASE("causal conv reads nothing after t") {
  Mat xv = random_matrix(6, 2, 8);
  T kernel(random_matrix(3, 2, 9));
  Validity full(6, 5);
  T base = depthwise_conv1d(T(xv), kernel, full, ConvAlignment::kCausal);
  Mat perturbed = xv;
  perturbed.row(4).setConstant(100);
  T moved = depthwise_conv1d(T(perturbed), kernel, full, ConvAlignment::kCausal);
  CHECK(base.value().topRows(4) == moved.value().topRows(4));
}

TEST_CASE("conv gradients match finite differences and skip padded taps") {
  T x = T::parameter(random_matrix(6, 3, 10));
  T kernel = T::parameter(random_matrix(9, 2, 11));
  T dk = T::parameter(random_matrix(3, 3, 12));
  Validity chunked{1, 1, 3, 3, 5, 5};
  CHECK(check([&] { return probe(conv1d(x, kernel, chunked)); },
              {{"x", x}, {"kernel", kernel}}) < 1e-6);
  CHECK(check([&] { return probe(depthwise_conv1d(x, dk, chunked)); },
              {{"x", x}, {"kernel", dk}}) < 1e-6);
  CHECK(check([&] {
          return probe(depthwise_conv1d(x, dk, chunked, ConvAlignment::kCausal));
        },
              {{"x", x}, {"kernel", dk}}) < 1e-6);

  // Only output 0 and 1 read frame 1 under chunk size 2; the gradient of
  // output 1 wrt frame 2 must be zero.
  {
    Graph<double> g;
    x.zero_grad();
    T y = slice_rows(depthwise_conv1d(x, dk, chunked), 1, 1);
    g.backward(sum(y));
    CHECK(x.grad().row(2).isZero());
    CHECK(!x.grad().row(1).isZero());
  }
}

TEST_CASE("conv2d_stride2 matches a direct loop and its gradients") {
  const Index length = 9, freq = 7, cin = 2, cout = 3;
  Mat xv = random_matrix(length, cin * freq, 13);
  Mat kv = random_matrix(cin * 9, cout, 14);
  Mat bv = random_matrix(1, cout, 34);
  T y = conv2d_stride2(T(xv), T(kv), T(bv), cin);
  const Index ot = stride2_length(length), of = stride2_length(freq);
  REQUIRE(y.rows() == ot);
  REQUIRE(y.cols() == cout * of);
  for (Index t = 0; t < ot; ++t)
    for (Index f = 0; f < of; ++f)
      for (Index o = 0; o < cout; ++o) {
        double acc = bv(0, o);
        for (Index c = 0; c < cin; ++c)
          for (Index dt = 0; dt < 3; ++dt)
            for (Index df = 0; df < 3; ++df)
              acc += kv(c * 9 + dt * 3 + df, o) * xv(2 * t + dt, c * freq + 2 * f + df);
        CHECK(y.value()(t, o * of + f) == doctest::Approx(acc).epsilon(1e-12));
      }
  T x = T::parameter(xv), k = T::parameter(kv), b = T::parameter(bv);
  CHECK(check([&] { return probe(conv2d_stride2(x, k, b, cin)); },
              {{"x", x}, {"kernel", k}, {"bias", b}}) < 1e-6);
}

TEST_CASE("layer_norm examples and gradient") {
  T gain(Mat::Ones(1, 2)), shift(Mat::Zero(1, 2));
  CHECK(layer_norm(T(Mat::Constant(1, 2, 4.0)), gain, shift).value().isZero());
  Mat x(1, 2);
  x << 1, 3;
  T y = layer_norm(T(x), gain, shift, 1e-12);
  CHECK(y.value()(0, 0) == doctest::Approx(-1.0));
  CHECK(y.value()(0, 1) == doctest::Approx(1.0));

  T xp = T::parameter(random_matrix(4, 6, 15));
  T g = T::parameter(random_matrix(1, 6, 16));
  T b = T::parameter(random_matrix(1, 6, 17));
  CHECK(check([&] { return probe(layer_norm(xp, g, b)); },
              {{"x", xp}, {"gain", g}, {"shift", b}}) < 1e-6);
}

TEST_CASE("activations") {
  CHECK(swish(T(Mat::Zero(1, 1))).item() == 0.0);
  Mat v(1, 2);
  v << 2, 0;
  CHECK(glu(T(v)).item() == doctest::Approx(1.0));
  CHECK_THROWS_AS(glu(T(Mat::Zero(2, 3))), Error);

  T x = T::parameter(random_matrix(3, 4, 18));
  std::vector<NamedParam> p{{"x", x}};
  CHECK(check([&] { return probe(swish(x)); }, p) < 1e-6);
  CHECK(check([&] { return probe(glu(x)); }, p) < 1e-6);
  CHECK(check([&] { return probe(sigmoid(x)); }, p) < 1e-6);
  CHECK(check([&] { return probe(exp(x)); }, p) < 1e-6);
  CHECK(check([&] { return probe(log_softmax(x)); }, p) < 1e-6);
  CHECK(check([&] { return probe(softmax(x)); }, p) < 1e-6);
  CHECK(check([&] { return probe(grouped_softmax(x, 2, 0.7)); }, p) < 1e-6);
  CHECK(check([&] { return probe(l2_normalize_rows(x)); }, p) < 1e-6);
  CHECK(check([&] { return probe(mean_rows(x)); }, p) < 1e-6);
  CHECK(check([&] { return probe(relu(x)); }, p) < 1e-6);
  T pos = T::parameter(random_matrix(3, 4, 19).cwiseAbs());
  CHECK(check([&] { return probe(log(pos, 0.1)); }, {{"x", pos}}) < 1e-6);
}

TEST_CASE("indexing ops route gradients") {
  T x = T::parameter(random_matrix(5, 4, 20));
  T row = T::parameter(random_matrix(1, 4, 21));
  std::vector<NamedParam> p{{"x", x}, {"row", row}};
  CHECK(check([&] { return probe(gather_rows(x, {0, 3, 3, 1})); }, p) < 1e-6);
  CHECK(check([&] { return probe(take_per_row(x, {{0, 1}, {3, 3}, {2, 0}, {1, 1}, {0, 3}})); },
              p) < 1e-6);
  CHECK(check([&] {
          return probe(replace_rows(x, {true, false, true, false, false}, row));
        },
              p) < 1e-6);
  CHECK(check([&] {
          return probe(concat_cols<double>({slice_cols(x, 1, 2), x, add_bias(x, row)}));
        },
              p) < 1e-6);
  CHECK(check([&] {
          T a = mean(x), b = sum(row);
          return weighted_sum<double>({a, b}, {0.25, -2.0});
        },
              p) < 1e-6);
}

TEST_CASE("stop_gradient is identity forward and blocks backward") {
  Mat wv = random_matrix(2, 3, 22);
  T w = T::parameter(wv), v = T::parameter(random_matrix(2, 3, 23));
  T s = stop_gradient(w);
  CHECK(s.value() == w.value());
  Graph<double> g;
  g.backward(sum(cwise_product(stop_gradient(w), v)));
  CHECK(w.grad().isZero());
  CHECK(v.grad() == wv);
}

TEST_CASE("gumbel_softmax_st forward is one-hot at the argmax") {
  Mat logits(1, 3);
  logits << 3, 1, 0;
  T y = gumbel_softmax_st(T(logits), 1, 0.5);
  Mat expected(1, 3);
  expected << 1, 0, 0;
  CHECK(y.value() == expected);

  Mat many = random_matrix(6, 8, 24);
  Mat noise = random_matrix(6, 8, 25);
  T h = gumbel_softmax_st(T(many), 2, 0.5, &noise);
  for (Index r = 0; r < 6; ++r)
    for (Index g = 0; g < 2; ++g) {
      auto seg = h.value().row(r).segment(g * 4, 4);
      CHECK(seg.sum() == 1.0);
      CHECK((seg.array() != 0).count() == 1);
    }
  CHECK_THROWS_AS(gumbel_softmax_st(T(logits), 1, 0.0), Error);
}

TEST_CASE("gumbel_softmax_st backward is the soft-path Jacobian") {
  Mat noise = random_matrix(3, 6, 26);
  Mat weights = random_matrix(3, 6, 27);
  T logits = T::parameter(random_matrix(3, 6, 28));
  const double tau = 0.7;
  Mat analytic;
  {
    Graph<double> g;
    logits.zero_grad();
    g.backward(sum(cwise_product(gumbel_softmax_st(logits, 2, tau, &noise), T(weights))));
    analytic = logits.grad();
  }
  // Finite differences of the soft relaxation, computed directly.
  auto soft = [&](const Mat& l) {
    double total = 0;
    for (Index r = 0; r < 3; ++r)
      for (Index g = 0; g < 2; ++g) {
        Eigen::ArrayXd z(3);
        for (Index j = 0; j < 3; ++j) z(j) = (l(r, g * 3 + j) + noise(r, g * 3 + j)) / tau;
        z = (z - z.maxCoeff()).exp();
        z /= z.sum();
        for (Index j = 0; j < 3; ++j) total += z(j) * weights(r, g * 3 + j);
      }
    return total;
  };
  const double h = 1e-6;
  for (Index i = 0; i < 18; ++i) {
    Mat up = logits.value(), down = logits.value();
    up.data()[i] += h;
    down.data()[i] -= h;
    CHECK(analytic.data()[i] == doctest::Approx((soft(up) - soft(down)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("backward accumulates over all use sites") {
  T x = T::parameter(Mat::Constant(1, 1, 3.0));
  {
    Graph<double> g;
    g.backward(cwise_product(x, x));
    CHECK(x.grad()(0, 0) == 6.0);
  }
  x.zero_grad();
  {
    Graph<double> g;
    T s = scale(x, 2.0);
    g.backward(add(s, s));
    CHECK(x.grad()(0, 0) == 4.0);
  }
}

TEST_CASE("backward errors") {
  T x = T::parameter(Mat::Ones(2, 2));
  {
    Graph<double> g;
    T y = scale(x, 2.0);
    CHECK_THROWS_AS(g.backward(y), Error);
  }
  {
    Graph<double> g;
    T y = sum(x);
    g.backward(y);
    try {
      g.backward(y);
      FAIL("expected throw");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::kGraph);
    }
  }
}

TEST_CASE("grad_check on a linear program is at float noise") {
  T w = T::parameter(random_matrix(3, 3, 29));
  Mat c = random_matrix(3, 3, 30);
  auto report = grad_check([&] { return sum(cwise_product(w, T(c))); }, {{"w", w}});
  CHECK(report.max_rel_error < 1e-8);
  CHECK(report.entries.size() == 9);
}

TEST_CASE("grad_check detects a corrupted backward") {
  T w = T::parameter(random_matrix(2, 2, 31));
  auto corrupted = [&] {
    T out(Matrix<double>(w.value().array().square().matrix()));
    if (should_record(w)) {
      out.set_backward([w](const Mat& g) { w.add_grad(g.cwiseProduct(w.value())); });
    }
    return sum(out);
  };
  CHECK(grad_check(corrupted, {{"w", w}}).max_rel_error > 0.1);
}

TEST_CASE("operations are bitwise deterministic") {
  auto run = [] {
    T a = T::parameter(random_matrix(4, 6, 32));
    T k = T::parameter(random_matrix(3, 6, 33));
    Graph<double> g;
    T y = sum(swish(depthwise_conv1d(a, k, Validity{1, 1, 3, 3})));
    g.backward(y);
    return std::make_pair(y.item(), Mat(a.grad()));
  };
  auto first = run(), second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

}  // namespace
}  // namespace ufo2
