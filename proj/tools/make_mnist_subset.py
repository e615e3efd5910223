#!/usr/bin/env python3
# SPDX-FileCopyrightText: Copyright (c) 2026 The sgrlab Authors. All rights reserved.
# SPDX-License-Identifier: Apache-2.0
"""Build the desk-scale MNIST subset: the first 10000 training and 2000 test digits.

Usage: make_mnist_subset.py [--source DIR] [--out DIR] [--n-train 10000] [--n-test 2000]

--source holds the four uncompressed official IDX files. Without it the
`mnist-data` npm package (which ships them) is fetched with `npm pack`.
Output files are gzip'd IDX with a zero mtime, so reruns are byte-identical.
"""
import argparse
import gzip
import hashlib
import os
import struct
import subprocess
import tarfile
import tempfile

MD5 = {
    "train-images-idx3-ubyte": "6bbc9ace898e44ae57da46a324031adb",
    "train-labels-idx1-ubyte": "a25bea736e30d166cdddb491f175f624",
    "t10k-images-idx3-ubyte": "2646ac647ad5339dbf082846283269ea",
    "t10k-labels-idx1-ubyte": "27ae3e4e09519cfbb04c329615203637",
}


def read_idx(path):
    with open(path, "rb") as f:
        raw = f.read()
    if hashlib.md5(raw).hexdigest() != MD5[os.path.basename(path)]:
        raise SystemExit(f"checksum mismatch for {path}")
    magic, n = struct.unpack(">II", raw[:8])
    dims = [n]
    if magic == 0x803:
        dims += list(struct.unpack(">II", raw[8:16]))
        header = 16
    else:
        header = 8
    return magic, dims, raw[header:]


def write_subset(src, dst, count):
    magic, dims, body = read_idx(src)
    row = 1
    for d in dims[1:]:
        row *= d
    with open(dst, "wb") as raw, gzip.GzipFile(fileobj=raw, mode="wb", mtime=0, filename="") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(">I", count))
        for d in dims[1:]:
            f.write(struct.pack(">I", d))
        f.write(body[: count * row])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--source")
    parser.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))
    parser.add_argument("--n-train", type=int, default=10000)
    parser.add_argument("--n-test", type=int, default=2000)
    args = parser.parse_args()
    os.makedirs(args.out, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        source = args.source
        if source is None:
            subprocess.run(["npm", "pack", "mnist-data@1.2.6"], cwd=tmp, check=True)
            with tarfile.open(os.path.join(tmp, "mnist-data-1.2.6.tgz")) as tar:
                tar.extractall(tmp)
            source = os.path.join(tmp, "package", "data")
        for split, count in (("train", args.n_train), ("t10k", args.n_test)):
            for kind in ("images-idx3", "labels-idx1"):
                name = f"{split}-{kind}-ubyte"
                write_subset(os.path.join(source, name), os.path.join(args.out, name + ".gz"), count)
    print(f"wrote {args.n_train} train / {args.n_test} test digits to {args.out}")


if __name__ == "__main__":
    main()
