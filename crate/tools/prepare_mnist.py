"""Build the desk-scale MNIST subset used by the experiments.

Source: the `mnist` npm package (10,000 MNIST digits stored as JSON arrays of
pixel intensities already divided by 255 and rounded to 3 decimals). The
script restores the original bytes, shuffles with a fixed seed and writes
6000 training and 2000 testing examples as uncompressed IDX files.

    npm pack mnist@1.1.0
    python3 tools/prepare_mnist.py mnist-1.1.0.tgz data/mnist
"""
import json
import struct
import sys
import tarfile
from pathlib import Path

import numpy as np

N_TRAIN = 6000
N_TEST = 2000
SEED = 20200812


def load_digits(tgz):
    images, labels = [], []
    with tarfile.open(tgz) as tar:
        for digit in range(10):
            member = tar.getmember(f"package/src/digits/{digit}.json")
            flat = json.load(tar.extractfile(member))["data"]
            arr = np.rint(np.asarray(flat, dtype=np.float64) * 255.0).astype(np.uint8)
            arr = arr.reshape(-1, 784)
            images.append(arr)
            labels.append(np.full(arr.shape[0], digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def write_idx(out, prefix, x, y):
    with open(out / f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, x.shape[0], 28, 28))
        f.write(x.tobytes())
    with open(out / f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, y.shape[0]))
        f.write(y.tobytes())


def main():
    tgz, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    x, y = load_digits(tgz)
    order = np.random.default_rng(SEED).permutation(len(y))
    x, y = x[order], y[order]
    write_idx(out, "train", x[:N_TRAIN], y[:N_TRAIN])
    write_idx(out, "t10k", x[N_TRAIN:N_TRAIN + N_TEST], y[N_TRAIN:N_TRAIN + N_TEST])
    print(f"total={len(y)} train={N_TRAIN} test={N_TEST}")
    print("train label counts", np.bincount(y[:N_TRAIN], minlength=10))


if __name__ == "__main__":
    main()
