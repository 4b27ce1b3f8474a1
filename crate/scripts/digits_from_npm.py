#!/usr/bin/env python3
"""Convert the digit samples bundled in the `mnist` npm package to IDX files.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/digits_from_npm.py package/src/digits data/digits

Pixels in the package are stored as floats rounded to three decimals of
value/255; they are mapped back to bytes with round(v * 255). Samples are
interleaved with a fixed permutation (seed 42) so class order is mixed.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    samples = []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(flat) % 784 == 0
        for i in range(len(flat) // 784):
            px = bytes(min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784])
            samples.append((px, digit))
    random.Random(42).shuffle(samples)
    dst.mkdir(parents=True, exist_ok=True)
    n = len(samples)
    images = struct.pack(">IIII", 0x00000803, n, 28, 28) + b"".join(s[0] for s in samples)
    labels = struct.pack(">II", 0x00000801, n) + bytes(s[1] for s in samples)
    for name, payload in (("digits-images-idx3-ubyte.gz", images), ("digits-labels-idx1-ubyte.gz", labels)):
        with open(dst / name, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0, filename="") as gz:
            gz.write(payload)
    print(f"wrote {n} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
