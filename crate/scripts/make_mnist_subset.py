"""Build the 2,000/1,000 MNIST subset used by the desk-scale experiments.

The source is the 5,000-image MNIST sample (500 per digit, drawn from the
official training set) shipped inside the `mlxtend` wheel. Images are
shuffled with a fixed seed and written as standard IDX files.

    pip download --no-deps -d /tmp/wheels mlxtend
    python3 scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist-subset
"""

import gzip
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

TRAIN = 2000
TEST = 1000
SEED = 20240521


def write_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    wheel, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = np.loadtxt(gzip.decompress(raw).decode().splitlines(), delimiter=",", dtype=np.int64)
    pixels, labels = rows[:, :-1], rows[:, -1]
    order = np.random.default_rng(SEED).permutation(len(labels))
    pixels, labels = pixels[order].reshape(-1, 28, 28), labels[order]
    write_images(out / "train-images-idx3-ubyte", pixels[:TRAIN])
    write_labels(out / "train-labels-idx1-ubyte", labels[:TRAIN])
    write_images(out / "t10k-images-idx3-ubyte", pixels[TRAIN : TRAIN + TEST])
    write_labels(out / "t10k-labels-idx1-ubyte", labels[TRAIN : TRAIN + TEST])


if __name__ == "__main__":
    main()
