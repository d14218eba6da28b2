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
#include "stabn/serialize.hpp"

#include <cstring>
#include <istream>
#include <ostream>

#include "stabn/errors.hpp"

namespace stabn::io {

void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n) {
    throw FormatError("unexpected end of file (wanted " + std::to_string(n) + " bytes)");
  }
}

void write_u8(std::ostream& os, uint8_t v) { write_bytes(os, &v, 1); }

void write_u16(std::ostream& os, uint16_t v) {
  uint8_t b[2] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8)};
  write_bytes(os, b, 2);
}

void write_u32(std::ostream& os, uint32_t v) {
  uint8_t b[4] = {static_cast<uint8_t>(v), static_cast<uint8_t>(v >> 8),
                  static_cast<uint8_t>(v >> 16), static_cast<uint8_t>(v >> 24)};
  write_bytes(os, b, 4);
}

void write_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  write_u32(os, u);
}

uint8_t read_u8(std::istream& is) {
  uint8_t v;
  read_bytes(is, &v, 1);
  return v;
}

uint16_t read_u16(std::istream& is) {
  uint8_t b[2];
  read_bytes(is, b, 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

uint32_t read_u32(std::istream& is) {
  uint8_t b[4];
  read_bytes(is, b, 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

float read_f32(std::istream& is) {
  uint32_t u = read_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

void write_kv_block(std::ostream& os,
                    const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string block;
  for (const auto& [k, v] : kv) {
    block += k;
    block += '=';
    block += v;
    block += '\n';
  }
  write_u32(os, static_cast<uint32_t>(block.size()));
  write_bytes(os, block.data(), block.size());
}

std::map<std::string, std::string> read_kv_block(std::istream& is) {
  const uint32_t len = read_u32(is);
  std::string block(len, '\0');
  read_bytes(is, block.data(), len);
  std::map<std::string, std::string> out;
  size_t pos = 0;
  while (pos < block.size()) {
    size_t nl = block.find('\n', pos);
    if (nl == std::string::npos) nl = block.size();
    const std::string line = block.substr(pos, nl - pos);
    pos = nl + 1;
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed key=value line: " + line);
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void write_tensor_record(std::ostream& os, const std::string& name, const Tensor& t) {
  if (name.size() > 0xFFFF) throw InputError("tensor name too long");
  write_u16(os, static_cast<uint16_t>(name.size()));
  write_bytes(os, name.data(), name.size());
  write_u8(os, static_cast<uint8_t>(t.ndim()));
  for (int i = 0; i < t.ndim(); ++i) write_u32(os, static_cast<uint32_t>(t.dim(i)));
  write_bytes(os, t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
}

std::pair<std::string, Tensor> read_tensor_record(std::istream& is) {
  const uint16_t name_len = read_u16(is);
  std::string name(name_len, '\0');
  read_bytes(is, name.data(), name_len);
  const uint8_t ndim = read_u8(is);
  Shape shape(ndim);
  for (uint8_t i = 0; i < ndim; ++i) shape[i] = static_cast<int64_t>(read_u32(is));
  Tensor t = Tensor::zeros(shape);
  read_bytes(is, t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
  return {name, t};
}

void expect_magic(std::istream& is, const char* magic, uint8_t version,
                  const std::string& what) {
  const size_t n = std::strlen(magic);
  std::string got(n, '\0');
  read_bytes(is, got.data(), n);
  if (got != magic) throw FormatError(what + ": bad magic, not a " + what + " file");
  const uint8_t v = read_u8(is);
  if (v != version) {
    throw FormatError(what + ": unsupported version " + std::to_string(v));
  }
}

}  // namespace stabn::io
