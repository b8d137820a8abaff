#!/usr/bin/env python3
# Copyright 2026 The wmlstm Authors. All Rights Reserved.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Builds the bundled data under data/ from redistributable package archives.

  mnist/           The standard MNIST IDX files as shipped in the npm
                   `mnist-loader` package (MIT), stored gzip-compressed.
  sotu/corpus.txt  State of the Union addresses (US government works, public
                   domain) from `@stdlib/datasets-sotu`, concatenated in
                   chronological order up to ~1 MB.
"""
import argparse
import gzip
import os
import tarfile

MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--mnist-npm", required=True, help="mnist-loader-1.0.0.tgz")
    ap.add_argument("--sotu-npm", required=True, help="datasets-sotu-*.tgz")
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    ap.add_argument("--corpus-bytes", type=int, default=1 << 20)
    args = ap.parse_args()

    mnist_dir = os.path.join(args.out, "mnist")
    os.makedirs(mnist_dir, exist_ok=True)
    with tarfile.open(args.mnist_npm) as tar:
        for name in MNIST_FILES:
            payload = tar.extractfile("package/data/" + name).read()
            # mtime=0 keeps the archives byte-stable across rebuilds.
            with open(os.path.join(mnist_dir, name + ".gz"), "wb") as f:
                f.write(gzip.compress(payload, compresslevel=9, mtime=0))
            print(f"mnist/{name}.gz: {len(payload)} bytes uncompressed")

    chunks, total = [], 0
    with tarfile.open(args.sotu_npm) as tar:
        names = sorted(n for n in tar.getnames()
                       if n.startswith("package/data/") and n.endswith(".txt"))
        for name in names:
            text = tar.extractfile(name).read().strip() + b"\n\n"
            chunks.append(text)
            total += len(text)
            if total >= args.corpus_bytes:
                break
    corpus_dir = os.path.join(args.out, "sotu")
    os.makedirs(corpus_dir, exist_ok=True)
    with open(os.path.join(corpus_dir, "corpus.txt"), "wb") as f:
        f.write(b"".join(chunks))
    print(f"sotu/corpus.txt: {total} bytes from {len(chunks)} addresses")


if __name__ == "__main__":
    main()
