"""Build IDX-format MNIST files from the 5000-digit subset shipped in mlxtend.

The full MNIST archives are not fetched by this project. mlxtend bundles 500
real training digits per class as a gzipped CSV; this script splits them into
400 train / 100 test digits per class and writes the four standard IDX files.

    pip download --no-deps mlxtend -d /tmp/wheels
    python scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/mnist-5k
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"
TEST_PER_CLASS = 100


def write_idx(path, array, magic):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", n) for n in array.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + array.astype(np.uint8).tobytes())


def main(wheel, out_dir):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(CSV_MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images, labels = table[:, :-1].reshape(-1, 28, 28), table[:, -1]

    rng = np.random.default_rng(0)
    test_idx = []
    for c in range(10):
        members = np.flatnonzero(labels == c)
        test_idx.extend(rng.choice(members, TEST_PER_CLASS, replace=False))
    test_mask = np.zeros(len(labels), dtype=bool)
    test_mask[test_idx] = True

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte.gz", images[~test_mask], 0x803)
    write_idx(out / "train-labels-idx1-ubyte.gz", labels[~test_mask], 0x801)
    write_idx(out / "t10k-images-idx3-ubyte.gz", images[test_mask], 0x803)
    write_idx(out / "t10k-labels-idx1-ubyte.gz", labels[test_mask], 0x801)
    print(f"train={int((~test_mask).sum())} test={int(test_mask.sum())} -> {out}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
