"""IDX ingestion, normalized datasets, deterministic batching, and a
synthetic class-blob fixture.

IDX is the big-endian container the MNIST files ship in: a 32-bit magic
(2051 for image cubes, 2049 for label vectors), one 32-bit size per
dimension, then raw unsigned bytes. Parsing failures are typed and carry
the byte offset where the problem sits. Pixels normalize to [0,1] by /255;
serialization inverts that exactly, so parse/serialize round-trips bytes.

Nothing here touches the network; dataset files are found by path and a
separate fetch script documents how to obtain them.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import Xoshiro256, derive_seed

MAGIC_IMAGES = 2051
MAGIC_LABELS = 2049

# Refuse dimension products beyond this many payload bytes (8 GiB); a
# corrupt header would otherwise ask for an absurd allocation.
_MAX_PAYLOAD = 2 ** 33

IMAGE_FILES = {"train": "train-images-idx3-ubyte", "test": "t10k-images-idx3-ubyte"}
LABEL_FILES = {"train": "train-labels-idx1-ubyte", "test": "t10k-labels-idx1-ubyte"}


class IdxError(ValueError):
    """Malformed IDX payload; .offset is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class IdxBadMagic(IdxError):
    pass


class IdxTruncated(IdxError):
    pass


class IdxDimensionOverflow(IdxError):
    pass


def _read_header(data, expected_magic, ndim):
    if len(data) < 4:
        raise IdxTruncated(f"file ends inside the magic field ({len(data)} bytes)", len(data))
    (magic,) = struct.unpack_from(">i", data, 0)
    if magic != expected_magic:
        raise IdxBadMagic(f"magic {magic}, expected {expected_magic}", 0)
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise IdxTruncated(
            f"file ends inside the dimension fields ({len(data)} of {header_len} header bytes)",
            len(data))
    dims = []
    total = 1
    for i in range(ndim):
        offset = 4 + 4 * i
        (d,) = struct.unpack_from(">I", data, offset)
        if d > 2 ** 31 - 1:
            raise IdxDimensionOverflow(f"dimension {i} is {d}", offset)
        total *= d
        if total > _MAX_PAYLOAD:
            raise IdxDimensionOverflow(
                f"dimension {i} brings the payload to {total} bytes", offset)
        dims.append(d)
    expected_len = header_len + total
    if len(data) < expected_len:
        raise IdxTruncated(
            f"payload truncated: have {len(data)} bytes, need {expected_len}", len(data))
    return dims, header_len


def parse_idx_images(data):
    """Bytes of an idx3-ubyte file -> float64 array [N,H,W,1] in [0,1]."""
    (n, h, w), header_len = _read_header(data, MAGIC_IMAGES, 3)
    pixels = np.frombuffer(data, dtype=np.uint8, count=n * h * w, offset=header_len)
    return pixels.astype(np.float64).reshape(n, h, w, 1) / 255.0


def parse_idx_labels(data):
    """Bytes of an idx1-ubyte file -> list of int labels."""
    (n,), header_len = _read_header(data, MAGIC_LABELS, 1)
    return [int(b) for b in data[header_len:header_len + n]]


def serialize_idx_images(images):
    """Inverse of parse_idx_images; exact for any parsed input."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[3] != 1:
        raise ValueError(f"expected [N,H,W,1] images, got shape {arr.shape}")
    n, h, w, _ = arr.shape
    header = struct.pack(">iiii", MAGIC_IMAGES, n, h, w)
    payload = np.rint(arr * 255.0).astype(np.uint8).tobytes()
    return header + payload


def serialize_idx_labels(labels):
    header = struct.pack(">ii", MAGIC_LABELS, len(labels))
    return header + bytes(int(v) for v in labels)


@dataclass
class Dataset:
    """Images [N,H,W,1] in [0,1] with integer labels in [0,10)."""

    images: np.ndarray
    labels: list = field(default_factory=list)

    def __post_init__(self):
        n = self.images.shape[0]
        if n != len(self.labels):
            raise ValueError(f"{n} images but {len(self.labels)} labels")
        lo = float(self.images.min(initial=0.0))
        hi = float(self.images.max(initial=0.0))
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"pixel values outside [0,1]: range [{lo}, {hi}]")
        for i, lab in enumerate(self.labels):
            if not 0 <= lab < 10:
                raise ValueError(f"label {lab} at index {i} outside [0,10)")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, n):
        if n is None or n >= len(self):
            return self
        return Dataset(self.images[:n], self.labels[:n])


def load_dataset(data_dir, split, limit=None):
    """Read the IDX pair for 'train' or 'test' from data_dir."""
    if split not in IMAGE_FILES:
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    img_path = f"{data_dir}/{IMAGE_FILES[split]}"
    lab_path = f"{data_dir}/{LABEL_FILES[split]}"
    with open(img_path, "rb") as fh:
        images = parse_idx_images(fh.read())
    with open(lab_path, "rb") as fh:
        labels = parse_idx_labels(fh.read())
    return Dataset(images, labels).subset(limit)


def batch_indices(n, batch_size, seed, epoch):
    """Seeded permutation of range(n) cut into batch_size slices.

    The permutation depends only on (seed, epoch); the final partial batch
    is kept so every index appears exactly once per epoch.
    """
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch_size must be in [1, {n}], got {batch_size}")
    rng = Xoshiro256(derive_seed(seed, 0xBA7C4, epoch))
    perm = rng.permutation(n)
    return [perm[i:i + batch_size] for i in range(0, n, batch_size)]


def batches(ds, batch_size, seed, epoch):
    """Materialized (images, labels) batches for one epoch."""
    out = []
    for idx in batch_indices(len(ds), batch_size, seed, epoch):
        out.append((ds.images[idx], [ds.labels[i] for i in idx]))
    return out


def synthetic(n, seed):
    """Procedural 10-class dataset of 28x28 blob images.

    Class c's blob sits on a radius-7 ring at angle 2*pi*c/10 around the
    image center, jittered by at most one pixel per image, over a faint
    uniform noise floor. Labels go round-robin 0..9 so every class appears
    once n reaches 10. Fully determined by (n, seed).
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = Xoshiro256(derive_seed(seed, 0x5B10B5))
    jitter = rng.uniforms(2 * n).reshape(n, 2) * 2.0 - 1.0
    noise = rng.uniforms(n * 28 * 28).reshape(n, 28, 28) * 0.05
    yy, xx = np.mgrid[0:28, 0:28].astype(np.float64)
    labels = [i % 10 for i in range(n)]
    angles = 2.0 * np.pi * np.array(labels, dtype=np.float64) / 10.0
    cy = 14.0 + 7.0 * np.sin(angles) + jitter[:, 0]
    cx = 14.0 + 7.0 * np.cos(angles) + jitter[:, 1]
    sq = ((yy[None, :, :] - cy[:, None, None]) ** 2
          + (xx[None, :, :] - cx[:, None, None]) ** 2)
    blobs = 0.95 * np.exp(-sq / (2.0 * 2.2 ** 2))
    images = np.clip(blobs + noise, 0.0, 1.0)[..., None]
    return Dataset(images, labels)
