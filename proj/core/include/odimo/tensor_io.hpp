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

#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "odimo/tensor.hpp"

namespace odimo {

// Flat binary tensor container, used for checkpoints and dataset blobs:
//
//   magic "ODT1" | u8 dtype | u8 rank | rank x u32 dims (LE) | raw payload (LE)
//
// dtype codes: 0 = float32, 1 = float64, 2 = uint8, 3 = int32.
enum class Dtype : uint8_t { F32 = 0, F64 = 1, U8 = 2, I32 = 3 };

size_t dtype_size(Dtype d);

struct RawTensor {
  Dtype dtype = Dtype::F32;
  Shape shape;
  std::vector<uint8_t> bytes;  // little-endian payload

  int64_t count() const { return numel(shape); }
};

void write_odt(std::ostream& os, const RawTensor& t);
RawTensor read_odt(std::istream& is);

RawTensor to_raw(const Tensor& t);
Tensor from_raw(const RawTensor& r);  // f32/f64 payloads convert to odimo::real
RawTensor raw_from_u8(Shape shape, const std::vector<uint8_t>& values);
std::vector<uint8_t> u8_from_raw(const RawTensor& r);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Named-record container ("ODC1") holding ODT1 blobs; used for model and
// search-state checkpoints. Record order is preserved and meaningful for
// byte-identical reruns.
//
//   magic "ODC1" | u32 count | count x ( u16 name_len | name | ODT1 record )
class Checkpoint {
 public:
  void put(const std::string& name, RawTensor t);
  void put_tensor(const std::string& name, const Tensor& t);
  void put_string(const std::string& name, const std::string& value);

  bool has(const std::string& name) const;
  const RawTensor& get(const std::string& name) const;
  Tensor get_tensor(const std::string& name) const;
  std::string get_string(const std::string& name) const;

  const std::vector<std::pair<std::string, RawTensor>>& entries() const {
    return entries_;
  }

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);

 private:
  std::vector<std::pair<std::string, RawTensor>> entries_;
};

}  // namespace odimo
