"""Download the four MNIST IDX files and unpack them into a data directory.

The library itself never touches the network; this helper exists so a real
dataset can be dropped where `pdlab train --data-dir` expects it. Files are
fetched gzipped, decompressed, and header-checked before being kept.
"""

import argparse
import gzip
import os
import struct
import sys
import urllib.request

FILES = (
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
)
DEFAULT_BASE = "https://ossci-datasets.s3.amazonaws.com/mnist/"
MAGICS = {"idx3": 2051, "idx1": 2049}


def fetch(base_url, name, data_dir):
    url = base_url + name + ".gz"
    dest = os.path.join(data_dir, name)
    if os.path.exists(dest):
        print(f"{dest}: already present, skipping")
        return
    print(f"fetching {url}")
    with urllib.request.urlopen(url) as resp:
        raw = gzip.decompress(resp.read())
    kind = "idx3" if "idx3" in name else "idx1"
    magic = struct.unpack(">i", raw[:4])[0]
    if magic != MAGICS[kind]:
        raise SystemExit(f"{url}: bad magic {magic}, expected {MAGICS[kind]}")
    with open(dest, "wb") as fh:
        fh.write(raw)
    print(f"wrote {dest} ({len(raw)} bytes)")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default="data")
    ap.add_argument("--base-url", default=DEFAULT_BASE)
    args = ap.parse_args(argv)
    os.makedirs(args.data_dir, exist_ok=True)
    for name in FILES:
        fetch(args.base_url, name, args.data_dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
