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

#include "ufo2/ops.h"

#include <cmath>
#include <limits>

#include "ufo2/rng.h"

namespace ufo2 {

double Rng::gumbel() {
  double u = uniform();
  u = std::min(std::max(u, 1e-10), 1.0 - 1e-10);
  return -std::log(-std::log(u));
}

namespace {

template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                        const char* op) {
  UFO2_CHECK(a.rows() == b.rows() && a.cols() == b.cols(),
             ErrorKind::kDimension,
             std::string(op) + ": shapes " + a.shape_string() + " and " +
                 b.shape_string() + " differ");
}

template <typename Scalar>
Scalar sigmoid_scalar(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

// Row-wise softmax of z restricted to finite entries. Fails on a row with no
// finite entry.
template <typename Scalar>
Matrix<Scalar> stable_softmax(const Matrix<Scalar>& z) {
  Matrix<Scalar> y(z.rows(), z.cols());
  for (Index r = 0; r < z.rows(); ++r) {
    Scalar m = -std::numeric_limits<Scalar>::infinity();
    for (Index c = 0; c < z.cols(); ++c) m = std::max(m, z(r, c));
    UFO2_CHECK(std::isfinite(m), ErrorKind::kInvalidMask,
               "softmax row " + std::to_string(r) + " is entirely masked");
    Scalar total = 0;
    for (Index c = 0; c < z.cols(); ++c) {
      const Scalar e = std::exp(z(r, c) - m);
      y(r, c) = e;
      total += e;
    }
    y.row(r) /= total;
  }
  return y;
}

// dz = y * (g - rowsum(g * y)).
template <typename Scalar>
Matrix<Scalar> softmax_backward(const Matrix<Scalar>& y,
                                const Matrix<Scalar>& g) {
  Matrix<Scalar> dz(y.rows(), y.cols());
  for (Index r = 0; r < y.rows(); ++r) {
    const Scalar dot = (g.row(r).array() * y.row(r).array()).sum();
    dz.row(r) = y.row(r).array() * (g.row(r).array() - dot);
  }
  return dz;
}

// Input position read by tap j of output t, or -1 when it is padding.
inline Index conv_source(Index t, Index j, Index k, Index length,
                         const Validity& validity, ConvAlignment alignment) {
  const Index left = alignment == ConvAlignment::kCentered ? (k - 1) / 2 : k - 1;
  const Index p = t + j - left;
  if (p < 0 || p >= length || p > validity[t]) return -1;
  return p;
}

void check_conv_args(Index k, Index length, const Validity& validity) {
  UFO2_CHECK(k % 2 == 1, ErrorKind::kConfiguration,
             "convolution kernel size must be odd, got " + std::to_string(k));
  UFO2_CHECK(static_cast<Index>(validity.size()) == length,
             ErrorKind::kDimension, "validity length must equal frame count");
  for (Index t = 0; t < length; ++t) {
    UFO2_CHECK(validity[t] >= t, ErrorKind::kConfiguration,
               "validity[t] must be >= t");
  }
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  UFO2_CHECK(a.cols() == b.rows(), ErrorKind::kDimension,
             "matmul: inner dimensions of " + a.shape_string() + " and " +
                 b.shape_string() + " disagree");
  Tensor<Scalar> out(a.value() * b.value());
  if (should_record(a, b)) {
    out.set_backward([a, b](const Matrix<Scalar>& g) {
      if (a.requires_grad()) a.add_grad(g * b.value().transpose());
      if (b.requires_grad()) b.add_grad(a.value().transpose() * g);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> matmul_transposed(const Tensor<Scalar>& a,
                                 const Tensor<Scalar>& b) {
  UFO2_CHECK(a.cols() == b.cols(), ErrorKind::kDimension,
             "matmul_transposed: inner dimensions of " + a.shape_string() +
                 " and " + b.shape_string() + " disagree");
  Tensor<Scalar> out(a.value() * b.value().transpose());
  if (should_record(a, b)) {
    out.set_backward([a, b](const Matrix<Scalar>& g) {
      if (a.requires_grad()) a.add_grad(g * b.value());
      if (b.requires_grad()) b.add_grad(g.transpose() * a.value());
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "add");
  Tensor<Scalar> out(a.value() + b.value());
  if (should_record(a, b)) {
    out.set_backward([a, b](const Matrix<Scalar>& g) {
      a.add_grad(g);
      b.add_grad(g);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "sub");
  Tensor<Scalar> out(a.value() - b.value());
  if (should_record(a, b)) {
    out.set_backward([a, b](const Matrix<Scalar>& g) {
      a.add_grad(g);
      if (b.requires_grad()) b.add_grad(-g);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> cwise_product(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  require_same_shape(a, b, "cwise_product");
  Tensor<Scalar> out(a.value().cwiseProduct(b.value()));
  if (should_record(a, b)) {
    out.set_backward([a, b](const Matrix<Scalar>& g) {
      if (a.requires_grad()) a.add_grad(g.cwiseProduct(b.value()));
      if (b.requires_grad()) b.add_grad(g.cwiseProduct(a.value()));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> add_bias(const Tensor<Scalar>& x, const Tensor<Scalar>& row) {
  UFO2_CHECK(row.rows() == 1 && row.cols() == x.cols(), ErrorKind::kDimension,
             "add_bias: bias " + row.shape_string() + " does not fit " +
                 x.shape_string());
  Matrix<Scalar> v = x.value();
  v.rowwise() += row.value().row(0);
  Tensor<Scalar> out(std::move(v));
  if (should_record(x, row)) {
    out.set_backward([x, row](const Matrix<Scalar>& g) {
      x.add_grad(g);
      if (row.requires_grad()) row.add_grad(g.colwise().sum());
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> scale(const Tensor<Scalar>& x, Scalar factor) {
  Tensor<Scalar> out(x.value() * factor);
  if (should_record(x)) {
    out.set_backward(
        [x, factor](const Matrix<Scalar>& g) { x.add_grad(g * factor); });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sum(const Tensor<Scalar>& x) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(x.value().sum());
  if (should_record(x)) {
    out.set_backward([x](const Matrix<Scalar>& g) {
      x.add_grad(Matrix<Scalar>::Constant(x.rows(), x.cols(), g(0, 0)));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> mean(const Tensor<Scalar>& x) {
  return scale(sum(x), Scalar(1) / static_cast<Scalar>(x.size()));
}

template <typename Scalar>
Tensor<Scalar> mean_rows(const Tensor<Scalar>& x) {
  const Scalar n = static_cast<Scalar>(x.rows());
  Tensor<Scalar> out(Matrix<Scalar>(x.value().colwise().sum() / n));
  if (should_record(x)) {
    out.set_backward([x, n](const Matrix<Scalar>& g) {
      Matrix<Scalar> d(x.rows(), x.cols());
      d.rowwise() = g.row(0) / n;
      x.add_grad(d);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> weighted_sum(const std::vector<Tensor<Scalar>>& terms,
                            const std::vector<Scalar>& weights) {
  UFO2_CHECK(terms.size() == weights.size() && !terms.empty(),
             ErrorKind::kDimension, "weighted_sum: term/weight count mismatch");
  Scalar total = 0;
  bool record = false;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    total += weights[i] * terms[i].item();
    record = record || should_record(terms[i]);
  }
  Tensor<Scalar> out = Tensor<Scalar>::scalar(total);
  if (record) {
    out.set_backward([terms, weights](const Matrix<Scalar>& g) {
      for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i].requires_grad() && weights[i] != Scalar(0)) {
          terms[i].add_grad(g * weights[i]);
        }
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count) {
  UFO2_CHECK(start >= 0 && count >= 1 && start + count <= x.cols(),
             ErrorKind::kDimension, "slice_cols out of range");
  Tensor<Scalar> out(Matrix<Scalar>(x.value().middleCols(start, count)));
  if (should_record(x)) {
    out.set_backward([x, start, count](const Matrix<Scalar>& g) {
      Matrix<Scalar> d = Matrix<Scalar>::Zero(x.rows(), x.cols());
      d.middleCols(start, count) = g;
      x.add_grad(d);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> slice_rows(const Tensor<Scalar>& x, Index start, Index count) {
  UFO2_CHECK(start >= 0 && count >= 1 && start + count <= x.rows(),
             ErrorKind::kDimension, "slice_rows out of range");
  Tensor<Scalar> out(Matrix<Scalar>(x.value().middleRows(start, count)));
  if (should_record(x)) {
    out.set_backward([x, start, count](const Matrix<Scalar>& g) {
      Matrix<Scalar> d = Matrix<Scalar>::Zero(x.rows(), x.cols());
      d.middleRows(start, count) = g;
      x.add_grad(d);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& parts) {
  UFO2_CHECK(!parts.empty(), ErrorKind::kDimension, "concat_cols: no inputs");
  Index cols = 0;
  bool record = false;
  for (const auto& p : parts) {
    UFO2_CHECK(p.rows() == parts[0].rows(), ErrorKind::kDimension,
               "concat_cols: row counts differ");
    cols += p.cols();
    record = record || should_record(p);
  }
  Matrix<Scalar> v(parts[0].rows(), cols);
  Index offset = 0;
  for (const auto& p : parts) {
    v.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  Tensor<Scalar> out(std::move(v));
  if (record) {
    out.set_backward([parts](const Matrix<Scalar>& g) {
      Index off = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) p.add_grad(g.middleCols(off, p.cols()));
        off += p.cols();
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> gather_rows(const Tensor<Scalar>& x,
                           const std::vector<Index>& indices) {
  UFO2_CHECK(!indices.empty(), ErrorKind::kDimension, "gather_rows: no indices");
  Matrix<Scalar> v(static_cast<Index>(indices.size()), x.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    UFO2_CHECK(indices[i] >= 0 && indices[i] < x.rows(), ErrorKind::kDimension,
               "gather_rows: index out of range");
    v.row(static_cast<Index>(i)) = x.value().row(indices[i]);
  }
  Tensor<Scalar> out(std::move(v));
  if (should_record(x)) {
    out.set_backward([x, indices](const Matrix<Scalar>& g) {
      Matrix<Scalar> d = Matrix<Scalar>::Zero(x.rows(), x.cols());
      for (std::size_t i = 0; i < indices.size(); ++i) {
        d.row(indices[i]) += g.row(static_cast<Index>(i));
      }
      x.add_grad(d);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> take_per_row(const Tensor<Scalar>& x,
                            const std::vector<std::vector<Index>>& indices) {
  UFO2_CHECK(static_cast<Index>(indices.size()) == x.rows() && !indices.empty(),
             ErrorKind::kDimension, "take_per_row: one index list per row");
  const Index k = static_cast<Index>(indices[0].size());
  UFO2_CHECK(k >= 1, ErrorKind::kDimension, "take_per_row: empty index list");
  Matrix<Scalar> v(x.rows(), k);
  for (Index r = 0; r < x.rows(); ++r) {
    UFO2_CHECK(static_cast<Index>(indices[r].size()) == k,
               ErrorKind::kDimension, "take_per_row: ragged index lists");
    for (Index j = 0; j < k; ++j) {
      const Index c = indices[r][j];
      UFO2_CHECK(c >= 0 && c < x.cols(), ErrorKind::kDimension,
                 "take_per_row: index out of range");
      v(r, j) = x.value()(r, c);
    }
  }
  Tensor<Scalar> out(std::move(v));
  if (should_record(x)) {
    out.set_backward([x, indices, k](const Matrix<Scalar>& g) {
      Matrix<Scalar> d = Matrix<Scalar>::Zero(x.rows(), x.cols());
      for (Index r = 0; r < x.rows(); ++r) {
        for (Index j = 0; j < k; ++j) d(r, indices[r][j]) += g(r, j);
      }
      x.add_grad(d);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> replace_rows(const Tensor<Scalar>& x,
                            const std::vector<bool>& mask,
                            const Tensor<Scalar>& row) {
  UFO2_CHECK(static_cast<Index>(mask.size()) == x.rows(), ErrorKind::kDimension,
             "replace_rows: mask length must equal row count");
  UFO2_CHECK(row.rows() == 1 && row.cols() == x.cols(), ErrorKind::kDimension,
             "replace_rows: replacement row has wrong shape");
  Matrix<Scalar> v = x.value();
  for (Index r = 0; r < x.rows(); ++r) {
    if (mask[r]) v.row(r) = row.value().row(0);
  }
  Tensor<Scalar> out(std::move(v));
  if (should_record(x, row)) {
    out.set_backward([x, mask, row](const Matrix<Scalar>& g) {
      Matrix<Scalar> dx = g;
      RowVector<Scalar> drow = RowVector<Scalar>::Zero(g.cols());
      for (Index r = 0; r < g.rows(); ++r) {
        if (mask[r]) {
          drow += g.row(r);
          dx.row(r).setZero();
        }
      }
      if (x.requires_grad()) x.add_grad(dx);
      if (row.requires_grad()) row.add_grad(drow);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> sigmoid(const Tensor<Scalar>& x) {
  Matrix<Scalar> y = x.value().unaryExpr(&sigmoid_scalar<Scalar>);
  Tensor<Scalar> out(y);
  if (should_record(x)) {
    out.set_backward([x, y](const Matrix<Scalar>& g) {
      x.add_grad(g.array() * y.array() * (Scalar(1) - y.array()));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> swish(const Tensor<Scalar>& x) {
  Matrix<Scalar> s = x.value().unaryExpr(&sigmoid_scalar<Scalar>);
  Tensor<Scalar> out(Matrix<Scalar>(x.value().cwiseProduct(s)));
  if (should_record(x)) {
    out.set_backward([x, s](const Matrix<Scalar>& g) {
      const auto& v = x.value().array();
      x.add_grad(g.array() *
                 (s.array() + v * s.array() * (Scalar(1) - s.array())));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(const Tensor<Scalar>& x) {
  Tensor<Scalar> out(Matrix<Scalar>(x.value().cwiseMax(Scalar(0))));
  if (should_record(x)) {
    out.set_backward([x](const Matrix<Scalar>& g) {
      x.add_grad((x.value().array() > Scalar(0)).select(g, Scalar(0)));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> glu(const Tensor<Scalar>& x) {
  UFO2_CHECK(x.cols() % 2 == 0, ErrorKind::kDimension,
             "glu: last dimension " + std::to_string(x.cols()) + " is odd");
  const Index h = x.cols() / 2;
  Matrix<Scalar> a = x.value().leftCols(h);
  Matrix<Scalar> s = x.value().rightCols(h).unaryExpr(&sigmoid_scalar<Scalar>);
  Tensor<Scalar> out(Matrix<Scalar>(a.cwiseProduct(s)));
  if (should_record(x)) {
    out.set_backward([x, a, s, h](const Matrix<Scalar>& g) {
      Matrix<Scalar> d(x.rows(), x.cols());
      d.leftCols(h) = g.cwiseProduct(s);
      d.rightCols(h) =
          g.array() * a.array() * s.array() * (Scalar(1) - s.array());
      x.add_grad(d);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> exp(const Tensor<Scalar>& x) {
  Matrix<Scalar> y = x.value().array().exp().matrix();
  Tensor<Scalar> out(y);
  if (should_record(x)) {
    out.set_backward(
        [x, y](const Matrix<Scalar>& g) { x.add_grad(g.cwiseProduct(y)); });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> log(const Tensor<Scalar>& x, Scalar offset) {
  Tensor<Scalar> out(Matrix<Scalar>((x.value().array() + offset).log().matrix()));
  if (should_record(x)) {
    out.set_backward([x, offset](const Matrix<Scalar>& g) {
      x.add_grad(g.array() / (x.value().array() + offset));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> stop_gradient(const Tensor<Scalar>& x) {
  return Tensor<Scalar>(x.value());
}

template <typename Scalar>
Tensor<Scalar> dropout(const Tensor<Scalar>& x, Scalar rate, Rng& rng) {
  if (rate <= Scalar(0)) return x;
  UFO2_CHECK(rate < Scalar(1), ErrorKind::kConfiguration,
             "dropout rate must be < 1");
  Matrix<Scalar> keep(x.rows(), x.cols());
  const Scalar inv = Scalar(1) / (Scalar(1) - rate);
  for (Index i = 0; i < keep.size(); ++i) {
    keep.data()[i] = rng.bernoulli(static_cast<double>(rate)) ? Scalar(0) : inv;
  }
  return cwise_product(x, Tensor<Scalar>(std::move(keep)));
}

template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gain,
                          const Tensor<Scalar>& shift, Scalar eps) {
  const Index d = x.cols();
  UFO2_CHECK(d >= 1, ErrorKind::kDimension, "layer_norm: empty last axis");
  UFO2_CHECK(gain.rows() == 1 && gain.cols() == d && shift.rows() == 1 &&
                 shift.cols() == d,
             ErrorKind::kDimension, "layer_norm: gain/shift must be [1 x d]");
  Matrix<Scalar> xhat(x.rows(), d);
  RowVector<Scalar> inv_std(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const Scalar mu = x.value().row(r).mean();
    const Scalar var = (x.value().row(r).array() - mu).square().mean();
    inv_std(r) = Scalar(1) / std::sqrt(var + eps);
    xhat.row(r) = (x.value().row(r).array() - mu) * inv_std(r);
  }
  Matrix<Scalar> y = xhat;
  y.array().rowwise() *= gain.value().row(0).array();
  y.rowwise() += shift.value().row(0);
  Tensor<Scalar> out(std::move(y));
  if (should_record(x, gain, shift)) {
    out.set_backward([x, gain, shift, xhat, inv_std, d](const Matrix<Scalar>& g) {
      if (gain.requires_grad()) {
        gain.add_grad(g.cwiseProduct(xhat).colwise().sum());
      }
      if (shift.requires_grad()) shift.add_grad(g.colwise().sum());
      if (x.requires_grad()) {
        Matrix<Scalar> dxhat = g;
        dxhat.array().rowwise() *= gain.value().row(0).array();
        Matrix<Scalar> dx(x.rows(), d);
        for (Index r = 0; r < x.rows(); ++r) {
          const Scalar m1 = dxhat.row(r).mean();
          const Scalar m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
          dx.row(r) = inv_std(r) *
                      (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
        }
        x.add_grad(dx);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> l2_normalize_rows(const Tensor<Scalar>& x, Scalar eps) {
  Matrix<Scalar> y(x.rows(), x.cols());
  RowVector<Scalar> norms(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    norms(r) = x.value().row(r).norm();
    UFO2_CHECK(norms(r) > eps, ErrorKind::kNumericalDegeneracy,
               "l2_normalize_rows: row " + std::to_string(r) +
                   " has (near) zero norm");
    y.row(r) = x.value().row(r) / norms(r);
  }
  Tensor<Scalar> out(y);
  if (should_record(x)) {
    out.set_backward([x, y, norms](const Matrix<Scalar>& g) {
      Matrix<Scalar> d(x.rows(), x.cols());
      for (Index r = 0; r < x.rows(); ++r) {
        const Scalar dot = g.row(r).dot(y.row(r));
        d.row(r) = (g.row(r) - dot * y.row(r)) / norms(r);
      }
      x.add_grad(d);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> masked_softmax(const Tensor<Scalar>& logits,
                              const Matrix<Scalar>& bias) {
  UFO2_CHECK(bias.rows() == logits.rows() && bias.cols() == logits.cols(),
             ErrorKind::kDimension, "masked_softmax: bias shape mismatch");
  Matrix<Scalar> y = stable_softmax<Scalar>(logits.value() + bias);
  Tensor<Scalar> out(y);
  if (should_record(logits)) {
    out.set_backward([logits, y](const Matrix<Scalar>& g) {
      logits.add_grad(softmax_backward(y, g));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> softmax(const Tensor<Scalar>& logits) {
  Matrix<Scalar> y = stable_softmax<Scalar>(logits.value());
  Tensor<Scalar> out(y);
  if (should_record(logits)) {
    out.set_backward([logits, y](const Matrix<Scalar>& g) {
      logits.add_grad(softmax_backward(y, g));
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> log_softmax(const Tensor<Scalar>& logits) {
  const Matrix<Scalar>& z = logits.value();
  Matrix<Scalar> y(z.rows(), z.cols());
  for (Index r = 0; r < z.rows(); ++r) {
    const Scalar m = z.row(r).maxCoeff();
    const Scalar lse = m + std::log((z.row(r).array() - m).exp().sum());
    y.row(r) = z.row(r).array() - lse;
  }
  Tensor<Scalar> out(y);
  if (should_record(logits)) {
    out.set_backward([logits, y](const Matrix<Scalar>& g) {
      Matrix<Scalar> d(y.rows(), y.cols());
      for (Index r = 0; r < y.rows(); ++r) {
        d.row(r) = g.row(r).array() - y.row(r).array().exp() * g.row(r).sum();
      }
      logits.add_grad(d);
    });
  }
  return out;
}

namespace {

template <typename Scalar>
Matrix<Scalar> grouped_soft(const Matrix<Scalar>& z, Index groups) {
  const Index v = z.cols() / groups;
  Matrix<Scalar> y(z.rows(), z.cols());
  for (Index g = 0; g < groups; ++g) {
    y.middleCols(g * v, v) = stable_softmax<Scalar>(z.middleCols(g * v, v));
  }
  return y;
}

template <typename Scalar>
Matrix<Scalar> grouped_soft_backward(const Matrix<Scalar>& y,
                                     const Matrix<Scalar>& grad, Index groups) {
  const Index v = y.cols() / groups;
  Matrix<Scalar> d(y.rows(), y.cols());
  for (Index g = 0; g < groups; ++g) {
    d.middleCols(g * v, v) =
        softmax_backward<Scalar>(y.middleCols(g * v, v), grad.middleCols(g * v, v));
  }
  return d;
}

template <typename Scalar>
void check_groups(const Tensor<Scalar>& logits, Index groups,
                  Scalar temperature) {
  UFO2_CHECK(temperature > Scalar(0), ErrorKind::kConfiguration,
             "softmax temperature must be positive");
  UFO2_CHECK(groups >= 1 && logits.cols() % groups == 0, ErrorKind::kDimension,
             "grouped softmax: columns not divisible by group count");
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> grouped_softmax(const Tensor<Scalar>& logits, Index groups,
                               Scalar temperature) {
  check_groups(logits, groups, temperature);
  Matrix<Scalar> y =
      grouped_soft<Scalar>(logits.value() / temperature, groups);
  Tensor<Scalar> out(y);
  if (should_record(logits)) {
    out.set_backward([logits, y, groups, temperature](const Matrix<Scalar>& g) {
      logits.add_grad(grouped_soft_backward(y, g, groups) / temperature);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> gumbel_softmax_st(const Tensor<Scalar>& logits, Index groups,
                                 Scalar temperature,
                                 const Matrix<Scalar>* noise) {
  check_groups(logits, groups, temperature);
  Matrix<Scalar> z = logits.value();
  if (noise != nullptr) {
    UFO2_CHECK(noise->rows() == z.rows() && noise->cols() == z.cols(),
               ErrorKind::kDimension, "gumbel noise shape mismatch");
    z += *noise;
  }
  z /= temperature;
  const Index v = z.cols() / groups;
  Matrix<Scalar> hard = Matrix<Scalar>::Zero(z.rows(), z.cols());
  for (Index r = 0; r < z.rows(); ++r) {
    for (Index g = 0; g < groups; ++g) {
      Index best = 0;
      z.row(r).segment(g * v, v).maxCoeff(&best);
      hard(r, g * v + best) = Scalar(1);
    }
  }
  Tensor<Scalar> out(std::move(hard));
  if (should_record(logits)) {
    Matrix<Scalar> soft = grouped_soft<Scalar>(z, groups);
    out.set_backward([logits, soft, groups, temperature](const Matrix<Scalar>& g) {
      logits.add_grad(grouped_soft_backward(soft, g, groups) / temperature);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv1d(const Tensor<Scalar>& x, const Tensor<Scalar>& kernel,
                      const Validity& validity, ConvAlignment alignment) {
  const Index length = x.rows();
  const Index din = x.cols();
  UFO2_CHECK(kernel.rows() % din == 0, ErrorKind::kDimension,
             "conv1d: kernel rows must be a multiple of input channels");
  const Index k = kernel.rows() / din;
  check_conv_args(k, length, validity);
  // Patch matrix: row t holds the k taps of output t, zero where padded.
  Matrix<Scalar> patches = Matrix<Scalar>::Zero(length, k * din);
  for (Index t = 0; t < length; ++t) {
    for (Index j = 0; j < k; ++j) {
      const Index p = conv_source(t, j, k, length, validity, alignment);
      if (p >= 0) patches.row(t).segment(j * din, din) = x.value().row(p);
    }
  }
  Tensor<Scalar> out(Matrix<Scalar>(patches * kernel.value()));
  if (should_record(x, kernel)) {
    out.set_backward([x, kernel, validity, alignment, patches, k, din,
                      length](const Matrix<Scalar>& g) {
      if (kernel.requires_grad()) kernel.add_grad(patches.transpose() * g);
      if (x.requires_grad()) {
        Matrix<Scalar> dpatch = g * kernel.value().transpose();
        Matrix<Scalar> dx = Matrix<Scalar>::Zero(length, din);
        for (Index t = 0; t < length; ++t) {
          for (Index j = 0; j < k; ++j) {
            const Index p = conv_source(t, j, k, length, validity, alignment);
            if (p >= 0) dx.row(p) += dpatch.row(t).segment(j * din, din);
          }
        }
        x.add_grad(dx);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> depthwise_conv1d(const Tensor<Scalar>& x,
                                const Tensor<Scalar>& kernel,
                                const Validity& validity,
                                ConvAlignment alignment) {
  const Index length = x.rows();
  const Index d = x.cols();
  UFO2_CHECK(kernel.cols() == d, ErrorKind::kDimension,
             "depthwise_conv1d: kernel " + kernel.shape_string() +
                 " does not match input " + x.shape_string());
  const Index k = kernel.rows();
  check_conv_args(k, length, validity);
  Matrix<Scalar> y = Matrix<Scalar>::Zero(length, d);
  for (Index t = 0; t < length; ++t) {
    for (Index j = 0; j < k; ++j) {
      const Index p = conv_source(t, j, k, length, validity, alignment);
      if (p >= 0) {
        y.row(t) += x.value().row(p).cwiseProduct(kernel.value().row(j));
      }
    }
  }
  Tensor<Scalar> out(std::move(y));
  if (should_record(x, kernel)) {
    out.set_backward([x, kernel, validity, alignment, k, d,
                      length](const Matrix<Scalar>& g) {
      Matrix<Scalar> dx = Matrix<Scalar>::Zero(length, d);
      Matrix<Scalar> dk = Matrix<Scalar>::Zero(k, d);
      for (Index t = 0; t < length; ++t) {
        for (Index j = 0; j < k; ++j) {
          const Index p = conv_source(t, j, k, length, validity, alignment);
          if (p < 0) continue;
          dx.row(p) += g.row(t).cwiseProduct(kernel.value().row(j));
          dk.row(j) += g.row(t).cwiseProduct(x.value().row(p));
        }
      }
      if (x.requires_grad()) x.add_grad(dx);
      if (kernel.requires_grad()) kernel.add_grad(dk);
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> conv2d_stride2(const Tensor<Scalar>& x,
                              const Tensor<Scalar>& kernel,
                              const Tensor<Scalar>& bias, Index in_channels) {
  UFO2_CHECK(in_channels >= 1 && x.cols() % in_channels == 0,
             ErrorKind::kDimension, "conv2d_stride2: bad channel layout");
  UFO2_CHECK(kernel.rows() == in_channels * 9, ErrorKind::kDimension,
             "conv2d_stride2: kernel must have in_channels * 9 rows");
  UFO2_CHECK(bias.rows() == 1 && bias.cols() == kernel.cols(),
             ErrorKind::kDimension, "conv2d_stride2: bias must be [1 x out_channels]");
  const Index freq = x.cols() / in_channels;
  UFO2_CHECK(x.rows() >= 3 && freq >= 3, ErrorKind::kLength,
             "conv2d_stride2: input " + x.shape_string() +
                 " too small for a 3x3 kernel");
  const Index out_t = stride2_length(x.rows());
  const Index out_f = stride2_length(freq);
  const Index out_c = kernel.cols();
  const Index patch = in_channels * 9;

  auto patch_col = [freq](Index c, Index dt, Index df) {
    return std::array<Index, 2>{c * 9 + dt * 3 + df, c * freq + df};
  };

  Matrix<Scalar> patches(out_t * out_f, patch);
  const Matrix<Scalar>& xv = x.value();
  for (Index t = 0; t < out_t; ++t) {
    for (Index f = 0; f < out_f; ++f) {
      auto prow = patches.row(t * out_f + f);
      for (Index c = 0; c < in_channels; ++c) {
        for (Index dt = 0; dt < 3; ++dt) {
          for (Index df = 0; df < 3; ++df) {
            const auto [pc, xc] = patch_col(c, dt, df);
            prow(pc) = xv(2 * t + dt, xc + 2 * f);
          }
        }
      }
    }
  }
  const Matrix<Scalar> flat = patches * kernel.value();  // [(T'*F') x C]
  Matrix<Scalar> y(out_t, out_c * out_f);
  for (Index t = 0; t < out_t; ++t) {
    for (Index f = 0; f < out_f; ++f) {
      for (Index o = 0; o < out_c; ++o) {
        y(t, o * out_f + f) = flat(t * out_f + f, o) + bias.value()(0, o);
      }
    }
  }
  Tensor<Scalar> out(std::move(y));
  if (should_record(x, kernel, bias)) {
    out.set_backward([x, kernel, bias, patches, in_channels, freq, out_t, out_f,
                      out_c, patch_col](const Matrix<Scalar>& g) {
      Matrix<Scalar> gflat(out_t * out_f, out_c);
      for (Index t = 0; t < out_t; ++t) {
        for (Index f = 0; f < out_f; ++f) {
          for (Index o = 0; o < out_c; ++o) {
            gflat(t * out_f + f, o) = g(t, o * out_f + f);
          }
        }
      }
      if (kernel.requires_grad()) kernel.add_grad(patches.transpose() * gflat);
      if (bias.requires_grad()) bias.add_grad(gflat.colwise().sum());
      if (x.requires_grad()) {
        const Matrix<Scalar> dpatch = gflat * kernel.value().transpose();
        Matrix<Scalar> dx = Matrix<Scalar>::Zero(x.rows(), x.cols());
        for (Index t = 0; t < out_t; ++t) {
          for (Index f = 0; f < out_f; ++f) {
            for (Index c = 0; c < in_channels; ++c) {
              for (Index dt = 0; dt < 3; ++dt) {
                for (Index df = 0; df < 3; ++df) {
                  const auto [pc, xc] = patch_col(c, dt, df);
                  dx(2 * t + dt, xc + 2 * f) += dpatch(t * out_f + f, pc);
                }
              }
            }
          }
        }
        x.add_grad(dx);
      }
    });
  }
  return out;
}

#define UFO2_INSTANTIATE_OPS(S)                                                \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);               \
  template Tensor<S> matmul_transposed(const Tensor<S>&, const Tensor<S>&);    \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> sub(const Tensor<S>&, const Tensor<S>&);                  \
  template Tensor<S> cwise_product(const Tensor<S>&, const Tensor<S>&);        \
  template Tensor<S> add_bias(const Tensor<S>&, const Tensor<S>&);             \
  template Tensor<S> scale(const Tensor<S>&, S);                               \
  template Tensor<S> sum(const Tensor<S>&);                                    \
  template Tensor<S> mean(const Tensor<S>&);                                   \
  template Tensor<S> mean_rows(const Tensor<S>&);                              \
  template Tensor<S> weighted_sum(const std::vector<Tensor<S>>&,               \
                                  const std::vector<S>&);                      \
  template Tensor<S> slice_cols(const Tensor<S>&, Index, Index);               \
  template Tensor<S> slice_rows(const Tensor<S>&, Index, Index);               \
  template Tensor<S> concat_cols(const std::vector<Tensor<S>>&);               \
  template Tensor<S> gather_rows(const Tensor<S>&, const std::vector<Index>&); \
  template Tensor<S> take_per_row(const Tensor<S>&,                            \
                                  const std::vector<std::vector<Index>>&);     \
  template Tensor<S> replace_rows(const Tensor<S>&, const std::vector<bool>&,  \
                                  const Tensor<S>&);                           \
  template Tensor<S> sigmoid(const Tensor<S>&);                                \
  template Tensor<S> swish(const Tensor<S>&);                                  \
  template Tensor<S> relu(const Tensor<S>&);                                   \
  template Tensor<S> glu(const Tensor<S>&);                                    \
  template Tensor<S> exp(const Tensor<S>&);                                    \
  template Tensor<S> log(const Tensor<S>&, S);                                 \
  template Tensor<S> stop_gradient(const Tensor<S>&);                          \
  template Tensor<S> dropout(const Tensor<S>&, S, Rng&);                       \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&,            \
                                const Tensor<S>&, S);                          \
  template Tensor<S> l2_normalize_rows(const Tensor<S>&, S);                   \
  template Tensor<S> masked_softmax(const Tensor<S>&, const Matrix<S>&);       \
  template Tensor<S> softmax(const Tensor<S>&);                                \
  template Tensor<S> log_softmax(const Tensor<S>&);                            \
  template Tensor<S> grouped_softmax(const Tensor<S>&, Index, S);              \
  template Tensor<S> gumbel_softmax_st(const Tensor<S>&, Index, S,             \
                                       const Matrix<S>*);                      \
  template Tensor<S> conv1d(const Tensor<S>&, const Tensor<S>&,                \
                            const Validity&, ConvAlignment);                   \
  template Tensor<S> depthwise_conv1d(const Tensor<S>&, const Tensor<S>&,      \
                                      const Validity&, ConvAlignment);         \
  template Tensor<S> conv2d_stride2(const Tensor<S>&, const Tensor<S>&,       \
                                    const Tensor<S>&, Index);

UFO2_INSTANTIATE_OPS(float)
UFO2_INSTANTIATE_OPS(double)

}  // namespace ufo2
