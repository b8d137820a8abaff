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

// Binary weight container.
//
//   offset  size  field
//   0       4     magic "WMC1"
//   4       1     variant tag   (0 vanilla, 1 peephole, 2 working memory)
//   5       1     shape tag     (0 none, 1 diagonal, 2 full)
//   6       4     input_dim     u32 little-endian
//   10      4     hidden_dim    u32 little-endian
//   14      ...   W_gx W_ix W_fx W_ox W_gh W_ih W_fh W_oh [W_ic W_fc W_oc]
//                 b_g b_i b_f b_o, row-major, f64 little-endian
//
// Trained models append an optional readout section after the cell block,
// see trainer.h.

#ifndef WMLSTM_WEIGHTS_IO_H_
#define WMLSTM_WEIGHTS_IO_H_

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>

#include "wmlstm/cells.h"

namespace wmlstm {

inline constexpr char kWeightsMagic[4] = {'W', 'M', 'C', '1'};

void write_cell_params(std::ostream& out, const CellParams& p);
// Throws BadMagicError / TruncatedFileError / DataError.
CellParams read_cell_params(std::istream& in);

void save_cell_params(const std::filesystem::path& path, const CellParams& p);
CellParams load_cell_params(const std::filesystem::path& path);

// Little-endian helpers shared with the readout section writer.
void write_u32_le(std::ostream& out, std::uint32_t v);
std::uint32_t read_u32_le(std::istream& in, const char* what);
void write_f64_le(std::ostream& out, std::span<const double> values);
void read_f64_le(std::istream& in, std::span<double> values, const char* what);

// CRC-32 (zlib polynomial) of a byte string; used for fixture checksums and
// for the evaluation purity checks.
std::uint32_t crc32_of(std::span<const unsigned char> bytes);
std::uint32_t crc32_of_params(const CellParams& p);

}  // namespace wmlstm

#endif  // WMLSTM_WEIGHTS_IO_H_
