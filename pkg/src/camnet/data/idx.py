"""IDX binary format (the MNIST-family distribution format).

Layout: 2 zero bytes, a type code (0x08 = unsigned byte), the number of
dimensions, then one big-endian uint32 per dimension, then the raw values.
Files ending in ``.gz`` are transparently (de)compressed.
"""

from __future__ import annotations

import gzip
import os
import struct

import numpy as np

from camnet.data.dataset import ImageDataset
from camnet.errors import ConsistencyError, FormatError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
IMAGES4_MAGIC = 0x00000804

_TYPES = {
    0x08: np.dtype(np.uint8),
    0x09: np.dtype(np.int8),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def _open(path, mode="rb"):
    path = os.fspath(path)
    return gzip.open(path, mode) if path.endswith(".gz") else open(path, mode)


def parse_idx(raw: bytes, source: str = "<bytes>") -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{source}: file too short for an IDX header ({len(raw)} bytes)")
    magic = raw[:4]
    if magic[0] != 0 or magic[1] != 0 or magic[2] not in _TYPES or magic[3] == 0:
        raise FormatError(f"{source}: bad IDX magic {magic.hex(' ')}")
    dtype = _TYPES[magic[2]]
    ndim = magic[3]
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{source}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    count = int(np.prod(dims))
    body = raw[header:]
    if len(body) != count * dtype.itemsize:
        raise FormatError(f"{source}: expected {count * dtype.itemsize} data bytes for dims {dims}, "
                          f"found {len(body)}")
    return np.frombuffer(body, dtype=dtype).reshape(dims)


def read_idx(path) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    return parse_idx(raw, os.fspath(path))


def encode_idx(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    codes = {v.str.lstrip("<>|="): k for k, v in _TYPES.items()}
    key = array.dtype.str.lstrip("<>|=")
    if key not in codes:
        raise FormatError(f"dtype {array.dtype} has no IDX type code")
    code = codes[key]
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    return header + np.ascontiguousarray(array, dtype=_TYPES[code]).tobytes()


def write_idx(path, array: np.ndarray) -> None:
    with _open(path, "wb") as fh:
        fh.write(encode_idx(array))


def _magic(raw: bytes) -> int:
    return struct.unpack(">I", raw[:4])[0] if len(raw) >= 4 else -1


def load_idx(images_path, labels_path, name: str = "idx", domain_id: int = 0, split: str = "train",
             n_classes: int = 10) -> ImageDataset:
    """Load an image/label IDX pair, scaling pixels to [0, 1]."""
    with _open(images_path) as fh:
        img_raw = fh.read()
    with _open(labels_path) as fh:
        lab_raw = fh.read()
    if _magic(img_raw) not in (IMAGES_MAGIC, IMAGES4_MAGIC):
        raise FormatError(f"{images_path}: expected image magic 0x00000803, read {img_raw[:4].hex(' ')}")
    if _magic(lab_raw) != LABELS_MAGIC:
        raise FormatError(f"{labels_path}: expected label magic 0x00000801, read {lab_raw[:4].hex(' ')}")
    images = parse_idx(img_raw, os.fspath(images_path))
    labels = parse_idx(lab_raw, os.fspath(labels_path))
    if images.shape[0] != labels.shape[0]:
        raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels "
                               f"({images_path} vs {labels_path})")
    if images.ndim == 3:
        images = images[:, None]
    pixels = images.astype(np.float32) / np.float32(255.0)
    return ImageDataset(name, domain_id, pixels, labels.astype(np.int64), split=split, n_classes=n_classes)


def save_idx(dataset: ImageDataset, images_path, labels_path) -> None:
    """Write a classification dataset back to IDX (inverse of :func:`load_idx`)."""
    raw = np.rint(np.asarray(dataset.images, dtype=np.float64) * 255.0).astype(np.uint8)
    if raw.shape[1] == 1:
        raw = raw[:, 0]
    write_idx(images_path, raw)
    write_idx(labels_path, np.asarray(dataset.labels).astype(np.uint8))


_STANDARD = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def find_idx_pair(root, split: str):
    """Locate the standard MNIST-style file pair for ``split`` under ``root``."""
    for stem_img, stem_lab in [_STANDARD[split]] + [(_STANDARD[split][0].replace("-idx3-", "."),
                                                      _STANDARD[split][1].replace("-idx1-", "."))]:
        for ext in ("", ".gz"):
            img = os.path.join(root, stem_img + ext)
            lab = os.path.join(root, stem_lab + ext)
            if os.path.exists(img) and os.path.exists(lab):
                return img, lab
    return None
