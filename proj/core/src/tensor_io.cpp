// Copyright 2026 The ODiMO Authors. All Rights Reserved.
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

#include "odimo/tensor_io.hpp"

#include <cstring>
#include <fstream>

namespace odimo {

namespace {

constexpr char kTensorMagic[4] = {'O', 'D', 'T', '1'};
constexpr char kCheckpointMagic[4] = {'O', 'D', 'C', '1'};

void write_u16(std::ostream& os, uint16_t v) {
  uint8_t b[2] = {static_cast<uint8_t>(v & 0xff), static_cast<uint8_t>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ostream& os, uint32_t v) {
  uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint16_t read_u16(std::istream& is) {
  uint8_t b[2];
  is.read(reinterpret_cast<char*>(b), 2);
  ODIMO_CHECK(is.good(), "unexpected end of file while reading u16");
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::istream& is) {
  uint8_t b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  ODIMO_CHECK(is.good(), "unexpected end of file while reading u32");
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return v;
}

template <typename T>
std::vector<uint8_t> encode_le(const std::vector<T>& values) {
  // Host is little-endian on every supported target; memcpy is the layout.
  std::vector<uint8_t> bytes(values.size() * sizeof(T));
  std::memcpy(bytes.data(), values.data(), bytes.size());
  return bytes;
}

template <typename T>
std::vector<T> decode_le(const std::vector<uint8_t>& bytes) {
  ODIMO_CHECK(bytes.size() % sizeof(T) == 0, "payload size not a multiple of element size");
  std::vector<T> values(bytes.size() / sizeof(T));
  std::memcpy(values.data(), bytes.data(), bytes.size());
  return values;
}

}  // namespace

size_t dtype_size(Dtype d) {
  switch (d) {
    case Dtype::F32: return 4;
    case Dtype::F64: return 8;
    case Dtype::U8: return 1;
    case Dtype::I32: return 4;
  }
  fail("unknown dtype code");
}

void write_odt(std::ostream& os, const RawTensor& t) {
  ODIMO_CHECK(t.shape.size() <= 255, "tensor rank exceeds container limit");
  ODIMO_CHECK(static_cast<size_t>(t.count()) * dtype_size(t.dtype) == t.bytes.size(),
              strcat_msg("payload size ", t.bytes.size(), " does not match shape ",
                         shape_str(t.shape)));
  os.write(kTensorMagic, 4);
  const uint8_t dtype = static_cast<uint8_t>(t.dtype);
  const uint8_t rank = static_cast<uint8_t>(t.shape.size());
  os.write(reinterpret_cast<const char*>(&dtype), 1);
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int64_t d : t.shape) {
    ODIMO_CHECK(d >= 0 && d <= 0xffffffffLL, "dimension does not fit u32");
    write_u32(os, static_cast<uint32_t>(d));
  }
  os.write(reinterpret_cast<const char*>(t.bytes.data()),
           static_cast<std::streamsize>(t.bytes.size()));
}

RawTensor read_odt(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  ODIMO_CHECK(is.good() && std::memcmp(magic, kTensorMagic, 4) == 0,
              "bad tensor magic (expected ODT1)");
  uint8_t dtype = 0, rank = 0;
  is.read(reinterpret_cast<char*>(&dtype), 1);
  is.read(reinterpret_cast<char*>(&rank), 1);
  ODIMO_CHECK(is.good() && dtype <= 3, "bad dtype code in tensor header");
  RawTensor t;
  t.dtype = static_cast<Dtype>(dtype);
  t.shape.resize(rank);
  for (int i = 0; i < rank; ++i) t.shape[static_cast<size_t>(i)] = read_u32(is);
  const size_t payload = static_cast<size_t>(t.count()) * dtype_size(t.dtype);
  t.bytes.resize(payload);
  is.read(reinterpret_cast<char*>(t.bytes.data()), static_cast<std::streamsize>(payload));
  ODIMO_CHECK(is.gcount() == static_cast<std::streamsize>(payload),
              strcat_msg("truncated tensor payload: expected ", payload, " bytes, got ",
                         is.gcount()));
  return t;
}

RawTensor to_raw(const Tensor& t) {
  RawTensor r;
  r.shape = t.shape();
  if constexpr (sizeof(real) == 8) {
    r.dtype = Dtype::F64;
    std::vector<double> d(t.data().begin(), t.data().end());
    r.bytes = encode_le(d);
  } else {
    r.dtype = Dtype::F32;
    std::vector<float> d(t.data().begin(), t.data().end());
    r.bytes = encode_le(d);
  }
  return r;
}

Tensor from_raw(const RawTensor& r) {
  std::vector<real> data;
  if (r.dtype == Dtype::F32) {
    auto v = decode_le<float>(r.bytes);
    data.assign(v.begin(), v.end());
  } else if (r.dtype == Dtype::F64) {
    auto v = decode_le<double>(r.bytes);
    data.assign(v.begin(), v.end());
  } else if (r.dtype == Dtype::U8) {
    data.assign(r.bytes.begin(), r.bytes.end());
  } else {
    auto v = decode_le<int32_t>(r.bytes);
    data.assign(v.begin(), v.end());
  }
  return Tensor::from_data(r.shape, std::move(data));
}

RawTensor raw_from_u8(Shape shape, const std::vector<uint8_t>& values) {
  ODIMO_CHECK(static_cast<int64_t>(values.size()) == numel(shape),
              "u8 payload does not match shape");
  RawTensor r;
  r.dtype = Dtype::U8;
  r.shape = std::move(shape);
  r.bytes = values;
  return r;
}

std::vector<uint8_t> u8_from_raw(const RawTensor& r) {
  ODIMO_CHECK(r.dtype == Dtype::U8, "tensor is not uint8");
  return r.bytes;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  ODIMO_CHECK(os.good(), strcat_msg("cannot open ", path, " for writing"));
  write_odt(os, to_raw(t));
  ODIMO_CHECK(os.good(), strcat_msg("write failed for ", path));
}

Tensor load_tensor(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ODIMO_CHECK(is.good(), strcat_msg("cannot open ", path));
  return from_raw(read_odt(is));
}

void Checkpoint::put(const std::string& name, RawTensor t) {
  for (auto& e : entries_)
    if (e.first == name) {
      e.second = std::move(t);
      return;
    }
  entries_.emplace_back(name, std::move(t));
}

void Checkpoint::put_tensor(const std::string& name, const Tensor& t) {
  put(name, to_raw(t));
}

void Checkpoint::put_string(const std::string& name, const std::string& value) {
  std::vector<uint8_t> bytes(value.begin(), value.end());
  put(name, raw_from_u8({static_cast<int64_t>(bytes.size())}, bytes));
}

bool Checkpoint::has(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

const RawTensor& Checkpoint::get(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.first == name) return e.second;
  fail(strcat_msg("checkpoint has no record named '", name, "'"));
}

Tensor Checkpoint::get_tensor(const std::string& name) const {
  return from_raw(get(name));
}

std::string Checkpoint::get_string(const std::string& name) const {
  auto bytes = u8_from_raw(get(name));
  return std::string(bytes.begin(), bytes.end());
}

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  ODIMO_CHECK(os.good(), strcat_msg("cannot open ", path, " for writing"));
  os.write(kCheckpointMagic, 4);
  write_u32(os, static_cast<uint32_t>(entries_.size()));
  for (const auto& [name, tensor] : entries_) {
    ODIMO_CHECK(name.size() <= 0xffff, "record name too long");
    write_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_odt(os, tensor);
  }
  ODIMO_CHECK(os.good(), strcat_msg("write failed for ", path));
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  ODIMO_CHECK(is.good(), strcat_msg("cannot open ", path));
  char magic[4];
  is.read(magic, 4);
  ODIMO_CHECK(is.good() && std::memcmp(magic, kCheckpointMagic, 4) == 0,
              strcat_msg(path, ": bad checkpoint magic (expected ODC1)"));
  const uint32_t count = read_u32(is);
  Checkpoint ckpt;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t len = read_u16(is);
    std::string name(len, '\0');
    is.read(name.data(), len);
    ODIMO_CHECK(is.good(), "truncated checkpoint record name");
    ckpt.entries_.emplace_back(std::move(name), read_odt(is));
  }
  return ckpt;
}

}  // namespace odimo
