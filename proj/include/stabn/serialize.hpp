/* Copyright 2026 The stabn Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef STABN_SERIALIZE_HPP_
#define STABN_SERIALIZE_HPP_

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "stabn/tensor.hpp"

namespace stabn::io {

// All integers little-endian. Reads throw FormatError on truncation.
void write_u8(std::ostream& os, uint8_t v);
void write_u16(std::ostream& os, uint16_t v);
void write_u32(std::ostream& os, uint32_t v);
void write_f32(std::ostream& os, float v);
void write_bytes(std::ostream& os, const void* p, size_t n);

uint8_t read_u8(std::istream& is);
uint16_t read_u16(std::istream& is);
uint32_t read_u32(std::istream& is);
float read_f32(std::istream& is);
void read_bytes(std::istream& is, void* p, size_t n);

// Length-prefixed (u32) UTF-8 block of "key=value\n" lines.
void write_kv_block(std::ostream& os, const std::vector<std::pair<std::string, std::string>>& kv);
std::map<std::string, std::string> read_kv_block(std::istream& is);

// name (u16 length + bytes), ndim (u8), extents (u32 each), raw f64 data.
void write_tensor_record(std::ostream& os, const std::string& name, const Tensor& t);
std::pair<std::string, Tensor> read_tensor_record(std::istream& is);

void expect_magic(std::istream& is, const char* magic, uint8_t version,
                  const std::string& what);

}  // namespace stabn::io

#endif  // STABN_SERIALIZE_HPP_
