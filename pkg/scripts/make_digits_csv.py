#!/usr/bin/env python3
"""Regenerate data/digits.csv from the 8x8 handwritten-digits corpus.

Requires scikit-learn (test extra). The committed CSV is the canonical
artifact; this script only exists to reproduce it.
"""

from pathlib import Path

from sklearn.datasets import load_digits


def main():
    digits = load_digits()
    out = Path(__file__).resolve().parents[1] / "data" / "digits.csv"
    out.parent.mkdir(exist_ok=True)
    header = ",".join([f"pix{i}" for i in range(64)] + ["label"])
    lines = [header]
    for row, label in zip(digits.data, digits.target):
        lines.append(",".join(str(int(v)) for v in row) + f",{int(label)}")
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines) - 1} rows to {out}")


if __name__ == "__main__":
    main()
