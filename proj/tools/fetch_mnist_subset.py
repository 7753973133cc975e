#!/usr/bin/env python3
# Copyright 2026 The fedpoison Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Builds data/mnist5k from the 5000-image MNIST sample shipped in mlxtend.

The sample is re-encoded as uncompressed big-endian IDX files so the
C++ loader reads it exactly like the original MNIST distribution.
"""
import argparse
import gzip
import pathlib
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_rows(wheel_dir: pathlib.Path):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
         "-d", str(wheel_dir), "mlxtend"],
        check=True)
    wheel = next(wheel_dir.glob("mlxtend-*.whl"))
    with zipfile.ZipFile(wheel) as z:
        text = gzip.decompress(z.read(MEMBER)).decode()
    rows = []
    for line in text.splitlines():
        values = [int(float(v)) for v in line.split(",")]
        rows.append((values[:-1], values[-1]))
    return rows


def write_idx(out: pathlib.Path, rows):
    out.mkdir(parents=True, exist_ok=True)
    n = len(rows)
    with open(out / "images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for pixels, _ in rows:
            f.write(bytes(pixels))
    with open(out / "labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(label for _, label in rows))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(
        pathlib.Path(__file__).resolve().parent.parent / "data" / "mnist5k"))
    args = parser.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        rows = fetch_rows(pathlib.Path(tmp))
    write_idx(pathlib.Path(args.out), rows)
    print(f"wrote {len(rows)} images to {args.out}")


if __name__ == "__main__":
    main()
