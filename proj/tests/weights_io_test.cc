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

#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>

#include <gtest/gtest.h>

#include "oracle_values.h"
#include "wmlstm/errors.h"

namespace wmlstm {
namespace {

const std::filesystem::path kFixture =
    std::filesystem::path(WMLSTM_TEST_FIXTURES_DIR) / "golden_wmc.bin";

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string to_bytes(const CellParams& p) {
  std::ostringstream out(std::ios::binary);
  write_cell_params(out, p);
  return out.str();
}

CellParams from_bytes(const std::string& s) {
  std::istringstream in(s, std::ios::binary);
  return read_cell_params(in);
}

TEST(WeightsIoTest, GoldenFixtureLoadsWithExpectedValues) {
  const CellParams p = load_cell_params(kFixture);
  EXPECT_EQ(p.variant(), CellVariant::working_memory(ConnShape::kFull));
  EXPECT_EQ(p.input_dim(), oracle::kGoldenInput);
  EXPECT_EQ(p.hidden_dim(), oracle::kGoldenHidden);
  ASSERT_EQ(p.num_values(), static_cast<std::size_t>(oracle::kGoldenValues));
  int k = 0;
  for (auto t : p.tensors()) {
    for (double v : t) {
      EXPECT_EQ(v, (k - 20) / 16.0);
      ++k;
    }
  }
  // W_gx is the first block, W_ic the first block of the cell tensor.
  EXPECT_EQ(p.input_weights(Gate::kG)(0, 0), -20 / 16.0);
  EXPECT_EQ(p.cell_weights(Gate::kI)(0, 0), (24 + 16 - 20) / 16.0);
  EXPECT_EQ(p.bias(Gate::kO)(1), (59 - 20) / 16.0);
}

TEST(WeightsIoTest, GoldenFixtureRewritesByteIdentical) {
  const std::string original = file_bytes(kFixture);
  ASSERT_EQ(original.size(), oracle::kGoldenBytes);
  const CellParams p = load_cell_params(kFixture);
  EXPECT_EQ(to_bytes(p), original);
  EXPECT_EQ(crc32_of_params(p), oracle::kGoldenCrc32);
  EXPECT_EQ(crc32_of({reinterpret_cast<const unsigned char*>(original.data()),
                      original.size()}),
            oracle::kGoldenCrc32);
}

TEST(WeightsIoTest, RoundTripEveryVariantBitwise) {
  for (const CellVariant v :
       {CellVariant::vanilla(), CellVariant::peephole(),
        CellVariant::peephole(ConnShape::kFull),
        CellVariant::working_memory(ConnShape::kDiagonal),
        CellVariant::working_memory()}) {
    Rng rng(12);
    const CellParams p = init_params(v, 3, 5, rng);
    const CellParams q = from_bytes(to_bytes(p));
    EXPECT_EQ(q.variant(), v);
    EXPECT_EQ(q.wx, p.wx);
    EXPECT_EQ(q.wh, p.wh);
    EXPECT_EQ(q.wc, p.wc);
    EXPECT_EQ(q.b, p.b);
  }
}

TEST(WeightsIoTest, SaveAndLoadThroughFiles) {
  Rng rng(3);
  const CellParams p = init_params(CellVariant::peephole(), 2, 3, rng);
  const auto path = std::filesystem::temp_directory_path() / "wmlstm_io_test.bin";
  save_cell_params(path, p);
  EXPECT_EQ(crc32_of_params(load_cell_params(path)), crc32_of_params(p));
  std::filesystem::remove(path);
  EXPECT_THROW(load_cell_params(path), DataError);
}

TEST(WeightsIoTest, RejectsBadMagicTruncationAndBadTags) {
  const std::string good = file_bytes(kFixture);
  std::string bad = good;
  bad[3] = '2';
  EXPECT_THROW(from_bytes(bad), BadMagicError);
  EXPECT_THROW(from_bytes(good.substr(0, 2)), TruncatedFileError);
  EXPECT_THROW(from_bytes(good.substr(0, 12)), TruncatedFileError);
  EXPECT_THROW(from_bytes(good.substr(0, good.size() - 1)), TruncatedFileError);
  std::string tag = good;
  tag[4] = 7;
  EXPECT_THROW(from_bytes(tag), DataError);
  std::string mismatch = good;
  mismatch[4] = 0;  // vanilla with a full-connection shape tag
  EXPECT_THROW(from_bytes(mismatch), DataError);
}

TEST(Crc32Test, KnownVector) {
  const std::string s = "123456789";
  EXPECT_EQ(crc32_of({reinterpret_cast<const unsigned char*>(s.data()), s.size()}),
            0xCBF43926u);
}

}  // namespace
}  // namespace wmlstm
