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

#ifndef UFO2_CHECKPOINT_H_
#define UFO2_CHECKPOINT_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ufo2/tensor.h"

namespace ufo2 {

enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1, kUInt64 = 2, kUInt8 = 3 };

struct StoredTensor {
  DType dtype = DType::kFloat32;
  std::vector<std::uint64_t> dims;
  std::vector<unsigned char> payload;  // little-endian

  template <typename Scalar>
  static StoredTensor from_matrix(const Matrix<Scalar>& m, DType dtype);
  static StoredTensor from_u64(const std::vector<std::uint64_t>& values);
  static StoredTensor from_text(const std::string& text);

  // Converts float payloads to Scalar.
  template <typename Scalar>
  Matrix<Scalar> to_matrix() const;
  std::vector<std::uint64_t> to_u64() const;
  std::string to_text() const;
};

// Magic "UFO2", u32 version, u64 step, u32 count, then per tensor: u16 name
// length, name, u8 dtype, u8 ndim, ndim x u64 dims, payload; trailing CRC32
// of everything before it.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  std::uint64_t step = 0;
  std::map<std::string, StoredTensor> tensors;

  bool contains(const std::string& name) const { return tensors.count(name) > 0; }
  const StoredTensor& at(const std::string& name) const;

  std::vector<unsigned char> serialize() const;
  static Checkpoint deserialize(const std::vector<unsigned char>& bytes,
                                const std::string& origin = "<checkpoint>");
  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

std::uint32_t crc32_of(const unsigned char* data, std::size_t size);

}  // namespace ufo2

#endif  // UFO2_CHECKPOINT_H_
