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

#include "ufo2/checkpoint.h"

#include <zlib.h>

#include "ufo2/binary_io.h"

namespace ufo2 {

namespace {

std::size_t element_size(DType d) {
  switch (d) {
    case DType::kFloat32:
      return 4;
    case DType::kFloat64:
    case DType::kUInt64:
      return 8;
    case DType::kUInt8:
      return 1;
  }
  return 0;
}

std::uint64_t element_count(const std::vector<std::uint64_t>& dims) {
  std::uint64_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

}  // namespace

std::uint32_t crc32_of(const unsigned char* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  return static_cast<std::uint32_t>(crc32(crc, data, static_cast<uInt>(size)));
}

template <typename Scalar>
StoredTensor StoredTensor::from_matrix(const Matrix<Scalar>& m, DType dtype) {
  StoredTensor t;
  t.dtype = dtype;
  t.dims = {static_cast<std::uint64_t>(m.rows()), static_cast<std::uint64_t>(m.cols())};
  ByteWriter w;
  for (Index i = 0; i < m.size(); ++i) {
    if (dtype == DType::kFloat32) {
      w.put<float>(static_cast<float>(m.data()[i]));
    } else {
      UFO2_CHECK(dtype == DType::kFloat64, ErrorKind::kFormat, "matrix dtype must be float");
      w.put<double>(static_cast<double>(m.data()[i]));
    }
  }
  t.payload = std::move(w.bytes());
  return t;
}

StoredTensor StoredTensor::from_u64(const std::vector<std::uint64_t>& values) {
  StoredTensor t;
  t.dtype = DType::kUInt64;
  t.dims = {values.size()};
  ByteWriter w;
  for (auto v : values) w.put<std::uint64_t>(v);
  t.payload = std::move(w.bytes());
  return t;
}

StoredTensor StoredTensor::from_text(const std::string& text) {
  StoredTensor t;
  t.dtype = DType::kUInt8;
  t.dims = {text.size()};
  t.payload.assign(text.begin(), text.end());
  return t;
}

template <typename Scalar>
Matrix<Scalar> StoredTensor::to_matrix() const {
  UFO2_CHECK(dtype == DType::kFloat32 || dtype == DType::kFloat64, ErrorKind::kFormat,
             "tensor is not floating point");
  UFO2_CHECK(dims.size() == 2, ErrorKind::kFormat, "matrix tensor must have two dims");
  Matrix<Scalar> m(static_cast<Index>(dims[0]), static_cast<Index>(dims[1]));
  ByteReader r(payload.data(), payload.size(), "tensor payload");
  for (Index i = 0; i < m.size(); ++i) {
    m.data()[i] = dtype == DType::kFloat32 ? static_cast<Scalar>(r.get<float>())
                                           : static_cast<Scalar>(r.get<double>());
  }
  return m;
}

std::vector<std::uint64_t> StoredTensor::to_u64() const {
  UFO2_CHECK(dtype == DType::kUInt64, ErrorKind::kFormat, "tensor is not u64");
  std::vector<std::uint64_t> out(payload.size() / 8);
  ByteReader r(payload.data(), payload.size(), "tensor payload");
  for (auto& v : out) v = r.get<std::uint64_t>();
  return out;
}

std::string StoredTensor::to_text() const {
  UFO2_CHECK(dtype == DType::kUInt8, ErrorKind::kFormat, "tensor is not text");
  return std::string(payload.begin(), payload.end());
}

const StoredTensor& Checkpoint::at(const std::string& name) const {
  auto it = tensors.find(name);
  UFO2_CHECK(it != tensors.end(), ErrorKind::kLoad, "checkpoint has no tensor '" + name + "'");
  return it->second;
}

std::vector<unsigned char> Checkpoint::serialize() const {
  ByteWriter w;
  w.put_string("UFO2");
  w.put<std::uint32_t>(kVersion);
  w.put<std::uint64_t>(step);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    UFO2_CHECK(name.size() <= 0xffff, ErrorKind::kFormat, "tensor name too long");
    UFO2_CHECK(t.payload.size() == element_count(t.dims) * element_size(t.dtype),
               ErrorKind::kFormat, "payload size mismatch for " + name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_string(name);
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dtype));
    w.put<std::uint8_t>(static_cast<std::uint8_t>(t.dims.size()));
    for (auto d : t.dims) w.put<std::uint64_t>(d);
    w.put_bytes(t.payload.data(), t.payload.size());
  }
  w.put<std::uint32_t>(crc32_of(w.bytes().data(), w.bytes().size()));
  return w.bytes();
}

Checkpoint Checkpoint::deserialize(const std::vector<unsigned char>& bytes,
                                   const std::string& origin) {
  UFO2_CHECK(bytes.size() >= 24, ErrorKind::kLoad, origin + ": too short for a checkpoint");
  const std::size_t body = bytes.size() - 4;
  ByteReader tail(bytes.data() + body, 4, origin);
  UFO2_CHECK(tail.get<std::uint32_t>() == crc32_of(bytes.data(), body), ErrorKind::kLoad,
             origin + ": CRC32 mismatch (corrupted checkpoint)");
  ByteReader r(bytes.data(), body, origin);
  UFO2_CHECK(r.get_string(4) == "UFO2", ErrorKind::kLoad, origin + ": bad magic");
  const auto version = r.get<std::uint32_t>();
  UFO2_CHECK(version == kVersion, ErrorKind::kLoad,
             origin + ": unsupported version " + std::to_string(version));
  Checkpoint c;
  c.step = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = r.get<std::uint16_t>();
    const std::string name = r.get_string(len);
    StoredTensor t;
    const auto tag = r.get<std::uint8_t>();
    UFO2_CHECK(tag <= 3, ErrorKind::kLoad, origin + ": unknown dtype tag for " + name);
    t.dtype = static_cast<DType>(tag);
    const auto ndim = r.get<std::uint8_t>();
    for (int d = 0; d < ndim; ++d) t.dims.push_back(r.get<std::uint64_t>());
    const std::uint64_t n = element_count(t.dims) * element_size(t.dtype);
    UFO2_CHECK(n <= r.remaining(), ErrorKind::kLoad, origin + ": truncated tensor " + name);
    t.payload.resize(n);
    for (auto& b : t.payload) b = r.get<std::uint8_t>();
    c.tensors.emplace(name, std::move(t));
  }
  UFO2_CHECK(r.remaining() == 0, ErrorKind::kLoad, origin + ": trailing bytes");
  return c;
}

void Checkpoint::save(const std::string& path) const { write_file_bytes(path, serialize()); }

Checkpoint Checkpoint::load(const std::string& path) {
  return deserialize(read_file_bytes(path), path);
}

template StoredTensor StoredTensor::from_matrix(const Matrix<float>&, DType);
template StoredTensor StoredTensor::from_matrix(const Matrix<double>&, DType);
template Matrix<float> StoredTensor::to_matrix() const;
template Matrix<double> StoredTensor::to_matrix() const;

}  // namespace ufo2
