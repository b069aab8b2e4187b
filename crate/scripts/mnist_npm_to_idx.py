#!/usr/bin/env python3
"""Convert the digits bundled in the `mnist` npm package into gzipped IDX files.

usage: npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
       python3 scripts/mnist_npm_to_idx.py package/src/digits data/mnist-npm
"""
import gzip
import json
import random
import struct
import sys


def write(out, prefix, items):
    header = struct.pack(">IIII", 0x803, len(items), 28, 28)
    pixels = bytes(min(255, max(0, round(v * 255))) for r, _ in items for v in r)
    with gzip.open(f"{out}/{prefix}-images-idx3-ubyte.gz", "wb", 9) as f:
        f.write(header + pixels)
    with gzip.open(f"{out}/{prefix}-labels-idx1-ubyte.gz", "wb", 9) as f:
        f.write(struct.pack(">II", 0x801, len(items)) + bytes(l for _, l in items))


def main(src, out):
    train, test = [], []
    for d in range(10):
        flat = json.load(open(f"{src}/{d}.json"))["data"]
        rows = [flat[i * 784:(i + 1) * 784] for i in range(len(flat) // 784)]
        cut = int(len(rows) * 0.8)
        train += [(r, d) for r in rows[:cut]]
        test += [(r, d) for r in rows[cut:]]
    rng = random.Random(20240601)
    rng.shuffle(train)
    rng.shuffle(test)
    write(out, "train", train)
    write(out, "t10k", test)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
