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

#ifndef UFO2_CHUNKING_H_
#define UFO2_CHUNKING_H_

#include <optional>
#include <string>
#include <vector>

#include "ufo2/ops.h"
#include "ufo2/tensor.h"

namespace ufo2 {

class Rng;

// Duration of one encoder frame: 10 ms features after 4x subsampling.
inline constexpr int kEncoderFrameMs = 40;
// Upper end of the training chunk-size draw: 25 frames = 1 s.
inline constexpr int kMaxTrainChunk = 25;

// Chunk configuration. An unbounded spec is full context (offline mode).
class ChunkSpec {
 public:
  static ChunkSpec unbounded() { return ChunkSpec(); }
  static ChunkSpec bounded(Index chunk_size);
  // Accepts a positive integer or "inf".
  static ChunkSpec parse(const std::string& text);

  bool is_unbounded() const { return !size_.has_value(); }
  Index size() const { return *size_; }

  // Last frame visible to frame t in a sequence of `length` frames.
  Index chunk_end(Index t, Index length) const;

  // Worst-case and mean algorithmic latency in milliseconds for a bounded
  // spec: a frame waits for the rest of its chunk.
  int max_latency_ms() const { return static_cast<int>(*size_) * kEncoderFrameMs; }
  double mean_latency_ms() const { return max_latency_ms() / 2.0; }

  std::string to_string() const;
  bool operator==(const ChunkSpec& other) const { return size_ == other.size_; }

 private:
  std::optional<Index> size_;
};

// B[i][j] = -inf when j is beyond chunk_end(i), else 0.
template <typename Scalar>
Matrix<Scalar> build_attention_bias(Index length, const ChunkSpec& spec);

// validity[t] = min(chunk_end(t), length - 1).
Validity conv_validity(Index length, const ChunkSpec& spec);

// One uniform draw in [1, max_chunk], shared by a whole mini-batch.
ChunkSpec sample_chunk_size(Rng& rng, Index max_chunk = kMaxTrainChunk);

struct SslMask {
  std::vector<bool> masked;
  std::vector<Index> starts;
  Index span = 0;

  std::vector<Index> masked_indices() const;
  Index masked_count() const;
};

// Each frame starts a span with probability `prob`; spans may overlap and are
// clipped at the sequence end. With `force_nonempty`, an empty draw is
// resampled.
SslMask sample_ssl_mask(Index length, double prob, Index span, Rng& rng,
                        bool force_nonempty = true);

}  // namespace ufo2

#endif  // UFO2_CHUNKING_H_
