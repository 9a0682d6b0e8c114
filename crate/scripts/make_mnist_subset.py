#!/usr/bin/env python3
"""Write the 5000-digit MNIST subset shipped inside the mlxtend wheel as IDX files.

Usage: pip download mlxtend --no-deps -d /tmp/mlx
       python3 scripts/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/mnist-5k

The source rows are sorted by class (500 per digit). Each class contributes
its first 400 rows to the training split and its last 100 to the test split;
both splits are interleaved round-robin by class so any prefix is balanced.
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path


def write_idx(out_dir: Path, prefix: str, rows):
    images = bytearray(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
    labels = bytearray(struct.pack(">II", 0x00000801, len(rows)))
    for pixels, label in rows:
        images.extend(pixels)
        labels.append(label)
    (out_dir / f"{prefix}-images-idx3-ubyte").write_bytes(images)
    (out_dir / f"{prefix}-labels-idx1-ubyte").write_bytes(labels)


def main():
    wheel, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    rows = []
    for line in gzip.decompress(raw).decode().strip().split("\n"):
        vals = [int(float(v)) for v in line.split(",")]
        rows.append((bytes(vals[:784]), vals[784]))
    by_class = {}
    for r in rows:
        by_class.setdefault(r[1], []).append(r)
    classes = sorted(by_class)
    train = [by_class[c][i] for i in range(400) for c in classes]
    test = [by_class[c][400 + i] for i in range(100) for c in classes]
    write_idx(out, "train", train)
    write_idx(out, "test", test)


if __name__ == "__main__":
    main()
