#!/usr/bin/env python3
"""Builds a desk-scale MNIST subset in the standard IDX layout.

Two public packages redistribute real MNIST digits:
  * the `mlxtend` wheel (pip) ships 5000 training digits (mnist_5k.csv.gz),
  * the `mnist` npm package ships 10000 digits, a superset of the above.

The mlxtend digits become the train split; the remaining 5000 npm digits
become the test split. Output files use the official MNIST file names so the
loader treats this directory exactly like a full MNIST download.

Usage: make_desk_mnist.py OUT_DIR
"""
import gzip
import io
import json
import pathlib
import struct
import subprocess
import sys
import tarfile
import tempfile
import zipfile

import numpy as np


def fetch(tmp: pathlib.Path):
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                    "-d", str(tmp), "mlxtend==0.24.0"], check=True)
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp, check=True)
    wheel = next(tmp.glob("mlxtend-*.whl"))
    tgz = next(tmp.glob("mnist-*.tgz"))
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    train = np.loadtxt(io.StringIO(raw), delimiter=",")
    digits, labels = [], []
    with tarfile.open(tgz) as t:
        for d in range(10):
            data = json.load(t.extractfile(f"package/src/digits/{d}.json"))["data"]
            block = np.asarray(data).reshape(-1, 784)
            digits.append(block)
            labels += [d] * len(block)
    return train, np.concatenate(digits), np.asarray(labels)


def write_idx(path: pathlib.Path, images: np.ndarray, labels: np.ndarray, prefix: str):
    n = len(labels)
    with gzip.GzipFile(path / f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())
    with gzip.GzipFile(path / f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    out = pathlib.Path(sys.argv[1])
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        train, pool, pool_labels = fetch(pathlib.Path(tmp))
    train_x = train[:, :-1]
    train_y = train[:, -1].astype(int)
    pool_u8 = np.round(pool * 255.0)
    # every mlxtend digit also appears in the npm pool; drop those from test
    dist = ((pool_u8 / 255.0) ** 2).sum(1)[:, None] + ((train_x / 255.0) ** 2).sum(1)[None, :] \
        - 2.0 * (pool_u8 / 255.0) @ (train_x / 255.0).T
    held_out = dist.min(1) > 1e-2
    write_idx(out, np.round(train_x), train_y, "train")
    write_idx(out, pool_u8[held_out], pool_labels[held_out], "t10k")
    print(f"train={len(train_y)} test={int(held_out.sum())} -> {out}")


if __name__ == "__main__":
    main()
