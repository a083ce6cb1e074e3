#!/usr/bin/env python3
"""Build MNIST IDX files from the digit arrays bundled in the `mnist` npm package.

The npm package ships roughly 10k MNIST digits as pixel/255 floats rounded to
three decimals, grouped by class. This script restores 8-bit pixels, shuffles
the samples with a fixed seed and writes a train/test pair of IDX files:

    python3 scripts/mnist_from_npm.py <node_modules/mnist> <out_dir> [--test 2000]
"""
import argparse
import json
import os
import random
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("package_dir")
    ap.add_argument("out_dir")
    ap.add_argument("--test", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=20240607)
    args = ap.parse_args()

    samples = []
    for digit in range(10):
        path = os.path.join(args.package_dir, "src", "digits", f"{digit}.json")
        with open(path) as fh:
            raw = json.load(fh)["data"]
        count = len(raw) // 784
        for i in range(count):
            pixels = bytes(
                min(255, max(0, round(v * 255))) for v in raw[i * 784 : (i + 1) * 784]
            )
            samples.append((pixels, digit))

    random.Random(args.seed).shuffle(samples)
    test = samples[: args.test]
    train = samples[args.test :]

    os.makedirs(args.out_dir, exist_ok=True)
    for prefix, part in (("train", train), ("t10k", test)):
        with open(os.path.join(args.out_dir, f"{prefix}-images-idx3-ubyte"), "wb") as fh:
            fh.write(struct.pack(">IIII", 0x00000803, len(part), 28, 28))
            for pixels, _ in part:
                fh.write(pixels)
        with open(os.path.join(args.out_dir, f"{prefix}-labels-idx1-ubyte"), "wb") as fh:
            fh.write(struct.pack(">II", 0x00000801, len(part)))
            fh.write(bytes(label for _, label in part))
        print(f"{prefix}: {len(part)} samples")


if __name__ == "__main__":
    main()
