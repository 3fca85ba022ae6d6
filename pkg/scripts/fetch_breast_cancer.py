"""Write the Wisconsin diagnostic breast cancer data as data/breast_cancer.csv.

Uses the copy bundled with scikit-learn (no network). Feature names are
snake_cased ("worst concave points" -> worst_concave_points) so they are valid
rule identifiers; the label column is ``diagnosis`` with values
malignant/benign. The SHA-256 of the output is checked against the pin below.
"""

import argparse
import csv
import hashlib
import re
import sys
from pathlib import Path

from sklearn.datasets import load_breast_cancer

PINNED_SHA256 = "fefd0594fe431ad9205a996d0fb446ec2f093a41fbee00c6df7fcc29518b15c6"
OUT = Path(__file__).resolve().parent.parent / "data" / "breast_cancer.csv"


def snake(name: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", name.lower()).strip("_")


def build(path: Path) -> str:
    bunch = load_breast_cancer()
    names = [snake(n) for n in bunch.feature_names]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "diagnosis"])
        for row, target in zip(bunch.data, bunch.target):
            w.writerow([*(repr(float(v)) for v in row), bunch.target_names[target]])
    return hashlib.sha256(path.read_bytes()).hexdigest()


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", type=Path, default=OUT)
    args = parser.parse_args()
    digest = build(args.out)
    print(f"{args.out}: sha256 {digest}")
    if PINNED_SHA256 and digest != PINNED_SHA256:
        print(f"checksum mismatch, expected {PINNED_SHA256}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
