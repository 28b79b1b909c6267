#!/usr/bin/env python3
"""Build a 10k-digit MNIST subset in gzipped IDX format.

Source: the `mnist` npm package, which ships 10,000 MNIST digits as JSON
(784 floats in [0, 1], three decimals). Pixels are mapped back to bytes with
round(v * 255). Samples are interleaved round-robin across classes so the
file is not label-sorted.

Usage: python3 scripts/fetch_mnist.py [out_dir]   (default: data/mnist)
"""
import gzip
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile


def main():
    out_dir = sys.argv[1] if len(sys.argv) > 1 else "data/mnist"
    os.makedirs(out_dir, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        per_class = []
        for digit in range(10):
            with open(os.path.join(tmp, "package", "src", "digits", f"{digit}.json")) as fh:
                data = json.load(fh)["data"]
            assert len(data) % 784 == 0
            per_class.append([data[i:i + 784] for i in range(0, len(data), 784)])

    images, labels = [], []
    cursor = [0] * 10
    while any(cursor[d] < len(per_class[d]) for d in range(10)):
        for d in range(10):
            if cursor[d] < len(per_class[d]):
                images.append(per_class[d][cursor[d]])
                labels.append(d)
                cursor[d] += 1

    img_bytes = bytearray(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
    for img in images:
        img_bytes.extend(min(255, max(0, round(v * 255))) for v in img)
    lbl_bytes = bytearray(struct.pack(">II", 0x00000801, len(labels)))
    lbl_bytes.extend(labels)

    with gzip.GzipFile(os.path.join(out_dir, "mnist10k-images-idx3-ubyte.gz"), "wb", mtime=0) as fh:
        fh.write(img_bytes)
    with gzip.GzipFile(os.path.join(out_dir, "mnist10k-labels-idx1-ubyte.gz"), "wb", mtime=0) as fh:
        fh.write(lbl_bytes)
    print(f"wrote {len(images)} images to {out_dir}")


if __name__ == "__main__":
    main()
