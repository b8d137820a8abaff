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

// Task data: synthetic adding / copy generators, MNIST IDX ingestion with
// pixel sequentialisation, and byte-level character corpora.

#ifndef WMLSTM_TASKS_H_
#define WMLSTM_TASKS_H_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "wmlstm/numerics.h"

namespace wmlstm {

// ---------------------------------------------------------------------------
// Adding problem

// Each step carries (value, marker). Exactly two markers per sequence: the
// first uniformly in [0, T/2), the second uniformly in [T/2, T).
struct AddingBatch {
  std::vector<Batch> inputs;  // T entries of 2 x B
  Vector targets;             // B; value[first] + value[second]
  std::vector<std::array<int, 2>> markers;

  int length() const { return static_cast<int>(inputs.size()); }
  int batch() const { return static_cast<int>(targets.size()); }
};

// Mean squared error of always predicting 1, i.e. Var(U + U').
inline constexpr double kAddingTrivialMse = 1.0 / 6.0;

AddingBatch gen_adding(int T, int batch, Rng& rng);

// ---------------------------------------------------------------------------
// Copy task

// Sequence length T + 20. Input: 10 data symbols, T blanks, the go marker,
// 9 blanks. Target: blank everywhere except the last 10 positions, which
// repeat the data symbols.
struct CopyBatch {
  static constexpr int kPayload = 10;
  static constexpr int kDataSymbols = 8;  // ids 0..7
  static constexpr int kBlank = 8;
  static constexpr int kGo = 9;
  static constexpr int kAlphabet = 10;

  int delay = 0;
  std::vector<std::vector<int>> inputs;   // batch x (T + 20)
  std::vector<std::vector<int>> targets;  // batch x (T + 20)

  int length() const { return delay + 2 * kPayload; }
  int batch() const { return static_cast<int>(inputs.size()); }
  int payload_start() const { return delay + kPayload; }
  // length() entries of kAlphabet x B.
  std::vector<Batch> one_hot_inputs() const;
};

CopyBatch gen_copy(int T, int batch, Rng& rng);

// Cross-entropy per symbol, over the whole output, of the best predictor
// without memory: certain blanks, then uniform over the 8 data symbols.
double copy_memoryless_baseline_nats(int T);

// ---------------------------------------------------------------------------
// MNIST

struct MnistRaw {
  int count = 0;
  int rows = 0;
  int cols = 0;
  std::vector<std::uint8_t> pixels;  // count x rows x cols, row-major
  std::vector<std::uint8_t> labels;
};

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr int kMnistPixels = 784;

// Reads an IDX image file and its label file. Gzip-compressed files are read
// transparently. Throws BadMagicError, TruncatedFileError, CountMismatchError
// or DataError (missing/unreadable file).
MnistRaw load_mnist_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

// `<dir>/<name>` if it exists, else `<dir>/<name>.gz`; DataError if neither.
std::filesystem::path find_data_file(const std::filesystem::path& dir,
                                     const std::string& name);

// Fisher-Yates shuffle of 0..783 driven by Rng(seed).
std::vector<int> make_permutation(std::uint64_t seed);

// A slice of an MNIST file presented as pixel sequences, row-major scan,
// optionally permuted. Pixels are stored as bytes and normalised by 255 when
// batches are built.
class PixelSequenceDataset {
 public:
  PixelSequenceDataset() = default;
  PixelSequenceDataset(const MnistRaw& raw, int first, int count,
                       std::optional<std::vector<int>> permutation = {});

  int size() const { return static_cast<int>(labels_.size()); }
  int label(int i) const { return labels_[i]; }
  const std::optional<std::vector<int>>& permutation() const {
    return permutation_;
  }
  // Pixel value in [0, 1] presented at step t of sequence i.
  double value(int i, int t) const;
  // 784 entries of 1 x indices.size().
  std::vector<Batch> make_inputs(std::span<const int> indices) const;

 private:
  std::vector<std::uint8_t> pixels_;
  std::vector<int> labels_;
  std::optional<std::vector<int>> permutation_;
};

struct MnistSplits {
  PixelSequenceDataset train;
  PixelSequenceDataset valid;
  PixelSequenceDataset test;
};

// First train_count images of the training file for training, the next
// valid_count for validation; the test file is used whole (or its first
// test_count images when test_count >= 0).
MnistSplits make_mnist_splits(const MnistRaw& train_file,
                              const MnistRaw& test_file, int train_count,
                              int valid_count, int test_count,
                              std::optional<std::vector<int>> permutation);

// ---------------------------------------------------------------------------
// Character corpus

struct SplitFractions {
  double train = 0.8;
  double valid = 0.1;
  double test = 0.1;
};

struct CharCorpus {
  std::vector<unsigned char> vocab;  // sorted distinct bytes; id = position
  std::vector<int> train;
  std::vector<int> valid;
  std::vector<int> test;

  int vocab_size() const { return static_cast<int>(vocab.size()); }
  std::string decode(std::span<const int> ids) const;
};

// Byte-level vocabulary; contiguous train/valid/test slices.
CharCorpus encode_corpus(std::string_view text, SplitFractions fractions = {});

std::string read_file_bytes(const std::filesystem::path& path);

// Entropy in bits of the empirical unigram distribution of `ids`.
double unigram_entropy_bits(std::span<const int> ids, int vocab_size);

}  // namespace wmlstm

#endif  // WMLSTM_TASKS_H_
