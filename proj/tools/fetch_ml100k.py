#!/usr/bin/env python3
"""Fetch MovieLens-100K and write a seeded per-user 80/20 implicit split.

The raw ratings ship inside the `recbole` wheel on PyPI, so this works
wherever pip can reach an index. Every rating counts as one implicit
interaction. Output (pair-list format, `user item` per line):

    <out>/train.txt
    <out>/test.txt

MovieLens data is distributed by GroupLens under its own terms; it is not
part of this repository.
"""

import argparse
import glob
import io
import os
import random
import subprocess
import sys
import tempfile
import zipfile
from collections import defaultdict


def read_interactions(wheel_path):
    with zipfile.ZipFile(wheel_path) as z:
        name = next(n for n in z.namelist() if n.endswith("ml-100k/ml-100k.inter"))
        text = io.TextIOWrapper(z.open(name), encoding="utf-8")
        next(text)  # header
        for line in text:
            parts = line.split("\t")
            if len(parts) >= 2:
                yield int(parts[0]), int(parts[1])


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data", "ml-100k"))
    ap.add_argument("--seed", type=int, default=2021)
    ap.add_argument("--test-fraction", type=float, default=0.2)
    ap.add_argument("--wheel", help="use an already downloaded recbole wheel")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        wheel = args.wheel
        if wheel is None:
            subprocess.run([sys.executable, "-m", "pip", "download", "recbole==1.2.1", "--no-deps", "-q", "-d", tmp],
                           check=True)
            wheel = glob.glob(os.path.join(tmp, "recbole-*.whl"))[0]
        by_user = defaultdict(set)
        for u, i in read_interactions(wheel):
            by_user[u].add(i)

    rng = random.Random(args.seed)
    os.makedirs(args.out, exist_ok=True)
    n_train = n_test = 0
    with open(os.path.join(args.out, "train.txt"), "w") as tr, open(os.path.join(args.out, "test.txt"), "w") as te:
        for u in sorted(by_user):
            items = sorted(by_user[u])
            rng.shuffle(items)
            n_hold = int(round(len(items) * args.test_fraction))
            if len(items) - n_hold < 1:
                n_hold = len(items) - 1
            for i in sorted(items[n_hold:]):
                tr.write(f"{u} {i}\n")
                n_train += 1
            for i in sorted(items[:n_hold]):
                te.write(f"{u} {i}\n")
                n_test += 1
    print(f"users={len(by_user)} train={n_train} test={n_test} -> {os.path.abspath(args.out)}")


if __name__ == "__main__":
    main()
