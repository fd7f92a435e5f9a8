"""Build the FashionMNIST IDX subset used by the desk-scale training test.

Source: the ``fashion-mnist`` npm package (all 70,000 images as per-class JSON
arrays of 784 uint8 pixels). Fetch it with ``npm pack fashion-mnist`` and
unpack, then:

    python scripts/make_fashion_subset.py path/to/package tests/data/fashion-subset

Draws 200 training and 100 test images per class without overlap, shuffles
each split with a fixed seed and writes gzipped IDX files.
"""
import argparse
import json
from pathlib import Path

import numpy as np

from vea.idx import write_idx


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("package_dir", type=Path)
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--train-per-class", type=int, default=200)
    ap.add_argument("--test-per-class", type=int, default=100)
    ap.add_argument("--seed", type=int, default=20240917)
    args = ap.parse_args()

    rng = np.random.default_rng(args.seed)
    splits = {"train": ([], []), "test": ([], [])}
    for label in range(10):
        rows = json.loads((args.package_dir / "src" / "clothes" / f"{label}.json").read_text())["data"]
        pixels = np.array([r for r in rows if len(r) == 784], dtype=np.uint8).reshape(-1, 28, 28)
        pick = rng.choice(len(pixels), args.train_per_class + args.test_per_class, replace=False)
        for name, idx in (("train", pick[: args.train_per_class]), ("test", pick[args.train_per_class :])):
            splits[name][0].append(pixels[idx])
            splits[name][1].append(np.full(len(idx), label, dtype=np.uint8))

    args.out_dir.mkdir(parents=True, exist_ok=True)
    for name, (imgs, labels) in splits.items():
        imgs, labels = np.concatenate(imgs), np.concatenate(labels)
        order = rng.permutation(len(labels))
        write_idx(args.out_dir / f"{name}-images-idx3-ubyte.gz", imgs[order])
        write_idx(args.out_dir / f"{name}-labels-idx1-ubyte.gz", labels[order])
        print(f"{name}: {len(labels)} images")


if __name__ == "__main__":
    main()
