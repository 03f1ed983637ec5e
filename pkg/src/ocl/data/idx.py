"""
Reader for the IDX binary format used by the MNIST distribution.

Layout: two zero bytes, a type code, the number of dimensions, then one
big-endian uint32 per dimension followed by the payload (big-endian).
Files may be plain or gzip-compressed.
"""

from __future__ import annotations

import gzip
import struct
from pathlib import Path

import numpy as np

_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def read_idx(path: str | Path) -> np.ndarray:
    p = Path(path)
    opener = gzip.open if p.suffix == ".gz" else open
    with opener(p, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise ValueError(f"[idx] bad magic in {p}")
    type_code, ndim = raw[2], raw[3]
    if type_code not in _TYPES:
        raise ValueError(f"[idx] unknown type code 0x{type_code:02x} in {p}")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    dtype = _TYPES[type_code]
    count = int(np.prod(dims)) if dims else 1
    offset = 4 + 4 * ndim
    if len(raw) - offset < count * dtype.itemsize:
        raise ValueError(f"[idx] truncated payload in {p}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return data.reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path: str | Path, arr: np.ndarray) -> None:
    """Write a uint8 array in IDX layout (fixtures and round trips)."""
    arr = np.asarray(arr, dtype=np.uint8)
    header = bytes([0, 0, 0x08, arr.ndim]) + struct.pack(f">{arr.ndim}I", *arr.shape)
    payload = header + arr.tobytes()
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if p.suffix == ".gz":
        with gzip.open(p, "wb") as f:
            f.write(payload)
    else:
        p.write_bytes(payload)


def _find(root: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (root / name).is_file():
            return root / name
    return None


def mnist_available(root: str | Path | None) -> bool:
    if not root:
        return False
    return all(_find(Path(root), stem) is not None for stem in MNIST_FILES["train"])


def load_mnist(root: str | Path, split: str = "train") -> tuple[np.ndarray, np.ndarray]:
    """Images flattened to 784 features scaled to [0, 1], and int64 labels."""
    root = Path(root)
    splits = ("train", "test") if split == "all" else (split,)
    xs, ys = [], []
    for s in splits:
        img_stem, lbl_stem = MNIST_FILES[s]
        img_p, lbl_p = _find(root, img_stem), _find(root, lbl_stem)
        if img_p is None or lbl_p is None:
            raise FileNotFoundError(f"[idx] MNIST {s} files not found under {root}")
        images = read_idx(img_p)
        labels = read_idx(lbl_p)
        if images.shape[0] != labels.shape[0]:
            raise ValueError(f"[idx] {images.shape[0]} images vs {labels.shape[0]} labels")
        xs.append(images.reshape(images.shape[0], -1).astype(np.float64) / 255.0)
        ys.append(labels.astype(np.int64))
    return np.concatenate(xs), np.concatenate(ys)
