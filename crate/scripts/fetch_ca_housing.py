#!/usr/bin/env python3
"""Download California Housing and write it as a plain CSV.

Usage: python3 scripts/fetch_ca_housing.py [OUT]   (default data/california_housing.csv)

Requires scikit-learn. The CSV has the eight features followed by the
MedHouseVal target, one header row, comma-separated.
"""
import pathlib
import sys

from sklearn.datasets import fetch_california_housing


def main() -> None:
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/california_housing.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    frame = fetch_california_housing(as_frame=True).frame
    frame.to_csv(out, index=False)
    print(f"wrote {len(frame)} rows to {out}")


if __name__ == "__main__":
    main()
