#!/usr/bin/env python3
"""Regenerates the bundled dataset fixtures under tests/data/.

MNIST: the 5,000-digit MNIST sample shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz, 500 digits per class, raw 0-255 pixels)
is shuffled with a fixed seed and split into 2,000 train / 500 test records,
then written in the original big-endian IDX layout.

Iris: the classic 150x4 iris table from scikit-learn, written as a CSV with a
header row and string class labels.

Usage: make_fixtures.py MNIST_5K_CSV_GZ OUT_DIR
"""
import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def write_idx_images(path, images):
    n = images.shape[0]
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    table = np.genfromtxt(gzip.open(src), delimiter=",")
    pixels, labels = table[:, :-1], table[:, -1].astype(int)
    order = np.random.default_rng(20240601).permutation(len(labels))
    pixels, labels = pixels[order], labels[order]

    mnist = out / "mnist"
    mnist.mkdir(parents=True, exist_ok=True)
    write_idx_images(mnist / "train-images-idx3-ubyte", pixels[:2000])
    write_idx_labels(mnist / "train-labels-idx1-ubyte", labels[:2000])
    write_idx_images(mnist / "t10k-images-idx3-ubyte", pixels[2000:2500])
    write_idx_labels(mnist / "t10k-labels-idx1-ubyte", labels[2000:2500])

    from sklearn.datasets import load_iris

    iris = load_iris()
    names = ["sepal_length", "sepal_width", "petal_length", "petal_width", "species"]
    with open(out / "iris.csv", "w") as f:
        f.write(",".join(names) + "\n")
        for row, target in zip(iris.data, iris.target):
            cells = [f"{v:g}" for v in row] + [iris.target_names[target]]
            f.write(",".join(cells) + "\n")


if __name__ == "__main__":
    main()
