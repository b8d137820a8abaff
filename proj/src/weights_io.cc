/* Copyright 2026 The wmlstm Authors. All Rights Reserved.

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

#include "wmlstm/weights_io.h"

#include <bit>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include <zlib.h>

#include "wmlstm/errors.h"

namespace wmlstm {

void write_u32_le(std::ostream& out, std::uint32_t v) {
  unsigned char buf[4];
  for (int k = 0; k < 4; ++k) buf[k] = static_cast<unsigned char>(v >> (8 * k));
  out.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32_le(std::istream& in, const char* what) {
  unsigned char buf[4];
  if (!in.read(reinterpret_cast<char*>(buf), 4)) {
    throw TruncatedFileError(std::string("weights: truncated while reading ") +
                             what);
  }
  std::uint32_t v = 0;
  for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(buf[k]) << (8 * k);
  return v;
}

void write_f64_le(std::ostream& out, std::span<const double> values) {
  unsigned char buf[8];
  for (double x : values) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (int k = 0; k < 8; ++k) buf[k] = static_cast<unsigned char>(bits >> (8 * k));
    out.write(reinterpret_cast<const char*>(buf), 8);
  }
}

void read_f64_le(std::istream& in, std::span<double> values, const char* what) {
  unsigned char buf[8];
  for (double& x : values) {
    if (!in.read(reinterpret_cast<char*>(buf), 8)) {
      throw TruncatedFileError(std::string("weights: truncated while reading ") +
                               what);
    }
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(buf[k]) << (8 * k);
    x = std::bit_cast<double>(bits);
  }
}

void write_cell_params(std::ostream& out, const CellParams& p) {
  out.write(kWeightsMagic, 4);
  out.put(static_cast<char>(p.variant().kind()));
  out.put(static_cast<char>(p.variant().shape()));
  write_u32_le(out, static_cast<std::uint32_t>(p.input_dim()));
  write_u32_le(out, static_cast<std::uint32_t>(p.hidden_dim()));
  for (auto t : p.tensors()) write_f64_le(out, t);
}

CellParams read_cell_params(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw TruncatedFileError("weights: missing header");
  if (!std::equal(magic, magic + 4, kWeightsMagic)) {
    throw BadMagicError("weights: bad magic, expected WMC1");
  }
  const int kind = in.get();
  const int shape = in.get();
  if (!in) throw TruncatedFileError("weights: truncated header");
  if (kind < 0 || kind > 2 || shape < 0 || shape > 2) {
    throw DataError("weights: unknown variant/shape tag");
  }
  CellVariant variant = CellVariant::vanilla();
  try {
    variant = CellVariant::make(static_cast<CellKind>(kind),
                                static_cast<ConnShape>(shape));
  } catch (const ContractViolation& e) {
    throw DataError(std::string("weights: ") + e.what());
  }
  const auto input_dim = read_u32_le(in, "input_dim");
  const auto hidden_dim = read_u32_le(in, "hidden_dim");
  if (input_dim == 0 || hidden_dim == 0 || input_dim > (1u << 20) ||
      hidden_dim > (1u << 16)) {
    throw DataError("weights: implausible dimensions");
  }
  CellParams p(variant, static_cast<int>(input_dim),
               static_cast<int>(hidden_dim));
  for (auto t : p.tensors()) read_f64_le(in, t, "cell tensors");
  return p;
}

void save_cell_params(const std::filesystem::path& path, const CellParams& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  write_cell_params(out, p);
  if (!out) throw DataError("write failed: " + path.string());
}

CellParams load_cell_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return read_cell_params(in);
}

std::uint32_t crc32_of(std::span<const unsigned char> bytes) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  constexpr std::size_t kChunk = 1u << 30;
  for (std::size_t off = 0; off < bytes.size(); off += kChunk) {
    const auto n = std::min(kChunk, bytes.size() - off);
    crc = ::crc32(crc, bytes.data() + off, static_cast<uInt>(n));
  }
  return static_cast<std::uint32_t>(crc);
}

std::uint32_t crc32_of_params(const CellParams& p) {
  std::ostringstream out(std::ios::binary);
  write_cell_params(out, p);
  const std::string s = out.str();
  return crc32_of({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

}  // namespace wmlstm
