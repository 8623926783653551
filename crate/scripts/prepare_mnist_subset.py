#!/usr/bin/env python3
"""Convert the 5000-image MNIST subset bundled with mlxtend into IDX files.

The subset is balanced (500 images per digit). The first 4000 rows of a
seeded shuffle become the training split, the remaining 1000 the test split.

Usage:
    python3 scripts/prepare_mnist_subset.py <mlxtend wheel or mnist_5k.csv.gz> <out dir>
"""

import gzip
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TRAIN_COUNT = 4000
SHUFFLE_SEED = 20200604


def load_rows(src: Path) -> np.ndarray:
    if src.suffix == ".whl":
        with zipfile.ZipFile(src) as z:
            raw = z.read(CSV_MEMBER)
    else:
        raw = src.read_bytes()
    text = gzip.decompress(raw).decode()
    return np.loadtxt(text.splitlines(), delimiter=",", dtype=np.int64)


def write_images(path: Path, images: np.ndarray) -> None:
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path: Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    rows = load_rows(src)
    assert rows.shape == (5000, 785), rows.shape
    pixels, labels = rows[:, :784], rows[:, 784]
    assert pixels.min() >= 0 and pixels.max() <= 255

    order = np.random.default_rng(SHUFFLE_SEED).permutation(len(rows))
    pixels, labels = pixels[order].reshape(-1, 28, 28), labels[order]

    write_images(out / "train-images-idx3-ubyte", pixels[:TRAIN_COUNT])
    write_labels(out / "train-labels-idx1-ubyte", labels[:TRAIN_COUNT])
    write_images(out / "test-images-idx3-ubyte", pixels[TRAIN_COUNT:])
    write_labels(out / "test-labels-idx1-ubyte", labels[TRAIN_COUNT:])
    print(f"wrote {TRAIN_COUNT} train / {len(rows) - TRAIN_COUNT} test images to {out}")


if __name__ == "__main__":
    main()
