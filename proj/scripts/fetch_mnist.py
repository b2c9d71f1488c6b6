#!/usr/bin/env python3
"""Build MNIST IDX files from the digits bundled in the `mnist` npm package.

The npm package ships 10,000 MNIST digits as per-class JSON arrays of
pixel intensities in [0, 1] (three decimals). They are shuffled with a fixed
seed and split into a training pool and a held-out set, then written in the
standard IDX layout so the C++ loader reads them like the original files:

    train-images-idx3-ubyte / train-labels-idx1-ubyte   (default 9000)
    t10k-images-idx3-ubyte  / t10k-labels-idx1-ubyte    (default 1000)

Usage: scripts/fetch_mnist.py [--out data/mnist] [--test 1000] [--package DIR]
"""
import argparse
import json
import os
import random
import struct
import subprocess
import tarfile
import tempfile


def unpack_package(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    tgz = os.path.join(workdir, "mnist-1.1.0.tgz")
    with tarfile.open(tgz) as tar:
        tar.extractall(workdir)
    return os.path.join(workdir, "package")


def write_idx(prefix, images, labels):
    with open(prefix + "-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with open(prefix + "-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "mnist"))
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--package", help="already unpacked npm package directory")
    ap.add_argument("--seed", type=int, default=1234)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        pkg = args.package or unpack_package(tmp)
        samples = []
        for digit in range(10):
            with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
                raw = json.load(f)["data"]
            for start in range(0, len(raw) - 783, 784):
                pixels = [min(255, max(0, round(v * 255))) for v in raw[start:start + 784]]
                samples.append((pixels, digit))

    random.Random(args.seed).shuffle(samples)
    test = samples[:args.test]
    train = samples[args.test:]
    os.makedirs(args.out, exist_ok=True)
    write_idx(os.path.join(args.out, "train"), [s[0] for s in train], [s[1] for s in train])
    write_idx(os.path.join(args.out, "t10k"), [s[0] for s in test], [s[1] for s in test])
    print(f"wrote {len(train)} training and {len(test)} held-out samples to {os.path.abspath(args.out)}")


if __name__ == "__main__":
    main()
