#!/usr/bin/env python3
"""Build IDX-format MNIST subsets from the digits bundled in the `mnist` npm package.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset_from_npm.py package/src/digits data/mnist 200 100

Writes train/test image and label files in the classic IDX layout. Images are
interleaved by class (0,1,...,9,0,1,...) so per-class prefixes are stable.
"""
import json
import struct
import sys
from pathlib import Path


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, dst, n_train, n_test = sys.argv[1], sys.argv[2], int(sys.argv[3]), int(sys.argv[4])
    per_class = []
    for d in range(10):
        data = json.load(open(Path(src) / f"{d}.json"))["data"]
        imgs = [
            [int(round(v * 255)) for v in data[i * 784:(i + 1) * 784]]
            for i in range(len(data) // 784)
        ]
        assert len(imgs) >= n_train + n_test, f"digit {d} has only {len(imgs)} samples"
        per_class.append(imgs)
    out = Path(dst)
    out.mkdir(parents=True, exist_ok=True)
    for split, start, count in (("train", 0, n_train), ("t10k", n_train, n_test)):
        images, labels = [], []
        for i in range(start, start + count):
            for d in range(10):
                images.append(per_class[d][i])
                labels.append(d)
        write_images(out / f"{split}-images-idx3-ubyte", images)
        write_labels(out / f"{split}-labels-idx1-ubyte", labels)
        print(f"{split}: {len(images)} images")


if __name__ == "__main__":
    main()
