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

#include "ufo2/chunking.h"

#include <algorithm>
#include <limits>

#include "ufo2/rng.h"

namespace ufo2 {

ChunkSpec ChunkSpec::bounded(Index chunk_size) {
  UFO2_CHECK(chunk_size >= 1, ErrorKind::kConfiguration,
             "chunk size must be >= 1, got " + std::to_string(chunk_size));
  ChunkSpec spec;
  spec.size_ = chunk_size;
  return spec;
}

ChunkSpec ChunkSpec::parse(const std::string& text) {
  if (text == "inf" || text == "Inf" || text == "-1") return unbounded();
  Index value = 0;
  try {
    std::size_t used = 0;
    value = std::stoll(text, &used);
    UFO2_CHECK(used == text.size(), ErrorKind::kConfiguration,
               "bad chunk size '" + text + "'");
  } catch (const std::logic_error&) {
    throw Error(ErrorKind::kConfiguration, "bad chunk size '" + text + "'");
  }
  return bounded(value);
}

Index ChunkSpec::chunk_end(Index t, Index length) const {
  if (is_unbounded()) return length - 1;
  return (t / *size_ + 1) * *size_ - 1;
}

std::string ChunkSpec::to_string() const {
  return is_unbounded() ? "inf" : std::to_string(*size_);
}

template <typename Scalar>
Matrix<Scalar> build_attention_bias(Index length, const ChunkSpec& spec) {
  UFO2_CHECK(length >= 1, ErrorKind::kLength, "attention bias needs T >= 1");
  Matrix<Scalar> bias = Matrix<Scalar>::Zero(length, length);
  if (spec.is_unbounded()) return bias;
  const Scalar neg_inf = -std::numeric_limits<Scalar>::infinity();
  for (Index i = 0; i < length; ++i) {
    const Index end = spec.chunk_end(i, length);
    for (Index j = end + 1; j < length; ++j) bias(i, j) = neg_inf;
  }
  return bias;
}

template Matrix<float> build_attention_bias<float>(Index, const ChunkSpec&);
template Matrix<double> build_attention_bias<double>(Index, const ChunkSpec&);

Validity conv_validity(Index length, const ChunkSpec& spec) {
  UFO2_CHECK(length >= 1, ErrorKind::kLength, "conv validity needs T >= 1");
  Validity validity(length);
  for (Index t = 0; t < length; ++t) {
    validity[t] = std::min(spec.chunk_end(t, length), length - 1);
  }
  return validity;
}

ChunkSpec sample_chunk_size(Rng& rng, Index max_chunk) {
  return ChunkSpec::bounded(rng.uniform_int(1, max_chunk));
}

std::vector<Index> SslMask::masked_indices() const {
  std::vector<Index> out;
  for (Index t = 0; t < static_cast<Index>(masked.size()); ++t) {
    if (masked[t]) out.push_back(t);
  }
  return out;
}

Index SslMask::masked_count() const {
  return static_cast<Index>(std::count(masked.begin(), masked.end(), true));
}

SslMask sample_ssl_mask(Index length, double prob, Index span, Rng& rng,
                        bool force_nonempty) {
  UFO2_CHECK(span >= 1, ErrorKind::kConfiguration, "mask span must be >= 1");
  UFO2_CHECK(length > span, ErrorKind::kLength,
             "mask needs more frames (" + std::to_string(length) +
                 ") than the span (" + std::to_string(span) + ")");
  UFO2_CHECK(!force_nonempty || prob > 0, ErrorKind::kConfiguration,
             "cannot force a non-empty mask with probability 0");
  SslMask mask;
  mask.span = span;
  do {
    mask.starts.clear();
    for (Index t = 0; t < length; ++t) {
      if (rng.bernoulli(prob)) mask.starts.push_back(t);
    }
  } while (force_nonempty && mask.starts.empty());
  mask.masked.assign(length, false);
  for (Index s : mask.starts) {
    for (Index t = s; t < std::min(s + span, length); ++t) mask.masked[t] = true;
  }
  return mask;
}

}  // namespace ufo2
