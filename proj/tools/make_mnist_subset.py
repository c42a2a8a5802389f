#!/usr/bin/env python3
"""Write a small, class-balanced MNIST subset as IDX files.

The source is the 5000-digit CSV bundled with the mlxtend package
(mlxtend/data/data/mnist_5k.csv.gz): 784 pixel values in 0..255 followed
by the label on each row.

    python3 tools/make_mnist_subset.py path/to/mnist_5k.csv.gz data/ --count 1000
"""

import argparse
import csv
import gzip
import pathlib
import struct


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("source")
    ap.add_argument("out_dir")
    ap.add_argument("--count", type=int, default=1000)
    args = ap.parse_args()

    # The bundled file is sorted by label, so take the same number of digits
    # from every class and interleave them.
    by_class = {}
    with gzip.open(args.source, "rt") as f:
        for row in csv.reader(f):
            values = [int(float(x)) for x in row]
            if len(values) != 785:
                raise SystemExit(f"expected 785 columns, got {len(values)}")
            by_class.setdefault(values[784], []).append(bytes(values[:784]))
    classes = sorted(by_class)
    per_class = args.count // len(classes)
    images, labels = [], []
    for i in range(per_class):
        for c in classes:
            images.append(by_class[c][i])
            labels.append(c)

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    n = len(images)
    with open(out / f"mnist-{n}-images.idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for img in images:
            f.write(img)
    with open(out / f"mnist-{n}-labels.idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))
    print(f"wrote {n} digits to {out}")


if __name__ == "__main__":
    main()
