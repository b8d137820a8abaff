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

#include "wmlstm/tasks.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <memory>
#include <numeric>

#include <zlib.h>

#include "wmlstm/errors.h"

namespace wmlstm {
namespace {

struct GzCloser {
  void operator()(gzFile f) const {
    if (f) gzclose(f);
  }
};
using GzHandle = std::unique_ptr<std::remove_pointer_t<gzFile>, GzCloser>;

// gzread passes uncompressed files through unchanged.
class IdxReader {
 public:
  explicit IdxReader(const std::filesystem::path& path) : path_(path) {
    if (!std::filesystem::exists(path)) {
      throw DataError("IDX file not found: " + path.string());
    }
    file_.reset(gzopen(path.string().c_str(), "rb"));
    if (!file_) throw DataError("cannot open IDX file: " + path.string());
  }

  std::uint32_t u32_be(const char* what) {
    unsigned char b[4];
    read(b, 4, what);
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) |
           (std::uint32_t{b[2]} << 8) | std::uint32_t{b[3]};
  }

  void read(void* dst, std::size_t n, const char* what) {
    auto* out = static_cast<unsigned char*>(dst);
    while (n > 0) {
      const unsigned chunk =
          static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
      const int got = gzread(file_.get(), out, chunk);
      if (got < 0) throw DataError("read error in " + path_.string());
      if (got == 0) {
        throw TruncatedFileError("IDX file " + path_.string() +
                                 " truncated while reading " + what);
      }
      out += got;
      n -= static_cast<std::size_t>(got);
    }
  }

 private:
  std::filesystem::path path_;
  GzHandle file_;
};

std::string hex32(std::uint32_t v) {
  char buf[11];
  std::snprintf(buf, sizeof buf, "0x%08x", v);
  return buf;
}

}  // namespace

AddingBatch gen_adding(int T, int batch, Rng& rng) {
  if (T < 2) throw ContractViolation("gen_adding: T must be >= 2");
  if (batch < 1) throw ContractViolation("gen_adding: batch must be >= 1");
  AddingBatch out;
  out.inputs.assign(T, Batch::Zero(2, batch));
  out.targets.resize(batch);
  out.markers.resize(batch);
  const int half = T / 2;
  for (int b = 0; b < batch; ++b) {
    for (int t = 0; t < T; ++t) out.inputs[t](0, b) = rng.uniform();
    const int first = static_cast<int>(rng.below(half));
    const int second = half + static_cast<int>(rng.below(T - half));
    out.inputs[first](1, b) = 1.0;
    out.inputs[second](1, b) = 1.0;
    out.markers[b] = {first, second};
    out.targets[b] = out.inputs[first](0, b) + out.inputs[second](0, b);
  }
  return out;
}

std::vector<Batch> CopyBatch::one_hot_inputs() const {
  std::vector<Batch> steps(length(), Batch::Zero(kAlphabet, batch()));
  for (int b = 0; b < batch(); ++b)
    for (int t = 0; t < length(); ++t) steps[t](inputs[b][t], b) = 1.0;
  return steps;
}

CopyBatch gen_copy(int T, int batch, Rng& rng) {
  if (T < 1) throw ContractViolation("gen_copy: T must be >= 1");
  if (batch < 1) throw ContractViolation("gen_copy: batch must be >= 1");
  CopyBatch out;
  out.delay = T;
  const int len = out.length();
  out.inputs.assign(batch, std::vector<int>(len, CopyBatch::kBlank));
  out.targets.assign(batch, std::vector<int>(len, CopyBatch::kBlank));
  for (int b = 0; b < batch; ++b) {
    for (int k = 0; k < CopyBatch::kPayload; ++k) {
      const int sym = static_cast<int>(rng.below(CopyBatch::kDataSymbols));
      out.inputs[b][k] = sym;
      out.targets[b][out.payload_start() + k] = sym;
    }
    out.inputs[b][out.payload_start()] = CopyBatch::kGo;
  }
  return out;
}

double copy_memoryless_baseline_nats(int T) {
  return CopyBatch::kPayload * std::log(double{CopyBatch::kDataSymbols}) /
         (T + 2 * CopyBatch::kPayload);
}

MnistRaw load_mnist_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  MnistRaw raw;
  IdxReader images(images_path);
  const auto magic = images.u32_be("magic");
  if (magic != kIdxImagesMagic) {
    throw BadMagicError("IDX images " + images_path.string() + ": magic " +
                        hex32(magic) + ", expected " + hex32(kIdxImagesMagic));
  }
  const auto count = images.u32_be("image count");
  const auto rows = images.u32_be("row count");
  const auto cols = images.u32_be("column count");
  if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096 || count > (1u << 24)) {
    throw DataError("IDX images " + images_path.string() +
                    ": implausible dimensions");
  }
  raw.count = static_cast<int>(count);
  raw.rows = static_cast<int>(rows);
  raw.cols = static_cast<int>(cols);
  raw.pixels.resize(std::size_t{count} * rows * cols);
  images.read(raw.pixels.data(), raw.pixels.size(), "pixels");

  IdxReader labels(labels_path);
  const auto lmagic = labels.u32_be("magic");
  if (lmagic != kIdxLabelsMagic) {
    throw BadMagicError("IDX labels " + labels_path.string() + ": magic " +
                        hex32(lmagic) + ", expected " + hex32(kIdxLabelsMagic));
  }
  const auto lcount = labels.u32_be("label count");
  if (lcount != count) {
    throw CountMismatchError("IDX files disagree: " + std::to_string(count) +
                             " images but " + std::to_string(lcount) +
                             " labels");
  }
  raw.labels.resize(lcount);
  labels.read(raw.labels.data(), raw.labels.size(), "labels");
  return raw;
}

std::filesystem::path find_data_file(const std::filesystem::path& dir,
                                     const std::string& name) {
  if (auto p = dir / name; std::filesystem::exists(p)) return p;
  if (auto p = dir / (name + ".gz"); std::filesystem::exists(p)) return p;
  throw DataError("data file " + name + " not found in " + dir.string());
}

std::vector<int> make_permutation(std::uint64_t seed) {
  std::vector<int> perm(kMnistPixels);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (int i = kMnistPixels - 1; i > 0; --i) {
    const auto j = static_cast<int>(rng.below(static_cast<std::uint64_t>(i) + 1));
    std::swap(perm[i], perm[j]);
  }
  return perm;
}

PixelSequenceDataset::PixelSequenceDataset(
    const MnistRaw& raw, int first, int count,
    std::optional<std::vector<int>> permutation)
    : permutation_(std::move(permutation)) {
  if (raw.rows * raw.cols != kMnistPixels) {
    throw DataError("pixel sequences expect 28x28 images");
  }
  if (first < 0 || count < 0 || first + count > raw.count) {
    throw ContractViolation("PixelSequenceDataset: slice [" +
                            std::to_string(first) + ", " +
                            std::to_string(first + count) + ") outside " +
                            std::to_string(raw.count) + " images");
  }
  if (permutation_) {
    std::vector<int> sorted = *permutation_;
    std::sort(sorted.begin(), sorted.end());
    for (int k = 0; k < kMnistPixels; ++k) {
      if (sorted.size() != kMnistPixels || sorted[k] != k) {
        throw ContractViolation("pixel permutation is not a bijection on 0..783");
      }
    }
  }
  const auto begin = raw.pixels.begin() + std::ptrdiff_t{first} * kMnistPixels;
  pixels_.assign(begin, begin + std::ptrdiff_t{count} * kMnistPixels);
  labels_.assign(raw.labels.begin() + first, raw.labels.begin() + first + count);
}

double PixelSequenceDataset::value(int i, int t) const {
  const int src = permutation_ ? (*permutation_)[t] : t;
  return pixels_[std::size_t(i) * kMnistPixels + src] / 255.0;
}

std::vector<Batch> PixelSequenceDataset::make_inputs(
    std::span<const int> indices) const {
  const auto B = static_cast<Eigen::Index>(indices.size());
  std::vector<Batch> steps(kMnistPixels, Batch(1, B));
  for (Eigen::Index b = 0; b < B; ++b) {
    const int i = indices[b];
    if (i < 0 || i >= size()) throw ContractViolation("pixel index out of range");
    for (int t = 0; t < kMnistPixels; ++t) steps[t](0, b) = value(i, t);
  }
  return steps;
}

MnistSplits make_mnist_splits(const MnistRaw& train_file,
                              const MnistRaw& test_file, int train_count,
                              int valid_count, int test_count,
                              std::optional<std::vector<int>> permutation) {
  if (train_count < 1 || valid_count < 0 ||
      train_count + valid_count > train_file.count) {
    throw ConfigError("MNIST split " + std::to_string(train_count) + "/" +
                      std::to_string(valid_count) + " exceeds the " +
                      std::to_string(train_file.count) + " training images");
  }
  const int n_test = test_count < 0 ? test_file.count : test_count;
  if (n_test > test_file.count) {
    throw ConfigError("MNIST test_count exceeds the test file");
  }
  return {PixelSequenceDataset(train_file, 0, train_count, permutation),
          PixelSequenceDataset(train_file, train_count, valid_count, permutation),
          PixelSequenceDataset(test_file, 0, n_test, permutation)};
}

std::string CharCorpus::decode(std::span<const int> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id < 0 || id >= vocab_size()) {
      throw ContractViolation("decode: id outside the vocabulary");
    }
    out.push_back(static_cast<char>(vocab[id]));
  }
  return out;
}

CharCorpus encode_corpus(std::string_view text, SplitFractions fractions) {
  if (text.empty()) throw DataError("encode_corpus: empty text");
  const double total = fractions.train + fractions.valid + fractions.test;
  if (fractions.train <= 0 || fractions.valid < 0 || fractions.test < 0 ||
      std::abs(total - 1.0) > 1e-9) {
    throw ConfigError("corpus split fractions must be nonnegative and sum to 1");
  }
  CharCorpus c;
  std::array<int, 256> id_of;
  id_of.fill(-1);
  for (unsigned char ch : text) id_of[ch] = 0;
  for (int byte = 0; byte < 256; ++byte) {
    if (id_of[byte] == 0) {
      id_of[byte] = c.vocab_size();
      c.vocab.push_back(static_cast<unsigned char>(byte));
    }
  }
  const std::size_t n = text.size();
  const auto n_train = static_cast<std::size_t>(std::floor(n * fractions.train));
  const auto n_valid = static_cast<std::size_t>(std::floor(n * fractions.valid));
  std::vector<int> ids(n);
  for (std::size_t k = 0; k < n; ++k) {
    ids[k] = id_of[static_cast<unsigned char>(text[k])];
  }
  c.train.assign(ids.begin(), ids.begin() + n_train);
  c.valid.assign(ids.begin() + n_train, ids.begin() + n_train + n_valid);
  c.test.assign(ids.begin() + n_train + n_valid, ids.end());
  return c;
}

std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

double unigram_entropy_bits(std::span<const int> ids, int vocab_size) {
  if (ids.empty()) return 0.0;
  std::vector<double> counts(vocab_size, 0.0);
  for (int id : ids) {
    if (id < 0 || id >= vocab_size) {
      throw ContractViolation("unigram_entropy_bits: id out of range");
    }
    counts[id] += 1.0;
  }
  const double n = static_cast<double>(ids.size());
  double h = 0.0;
  for (double k : counts) {
    if (k > 0) h -= (k / n) * std::log2(k / n);
  }
  return h;
}

}  // namespace wmlstm
