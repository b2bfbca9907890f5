"""Binary checkpoints.

Layout (all integers little-endian)::

    b"CAMN"  u32 version
    u32 len  JSON config (architecture text, width, shapes, heads, ...)
    u32 count
    count x { u16 len, name utf8, u8 dtype code, u8 ndim, ndim x u32 dim, raw values }
    u32 CRC-32 of everything above
"""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from camnet.arch.network import build_from_config
from camnet.engine.tensor import precision
from camnet.errors import ChecksumError, FormatError, VersionError

MAGIC = b"CAMN"
VERSION = 1
_DTYPES = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_CODES = {v: k for k, v in _DTYPES.items()}


def _config_of(model) -> dict:
    cfg = dict(model.config)
    cfg["n_heads"] = len(model.heads)
    cfg["head_frozen"] = list(model.head_frozen)
    cfg["active_head"] = model.active_head
    cfg["n_tasks"] = model.n_tasks
    return cfg


def encode_checkpoint(model) -> bytes:
    out = bytearray(MAGIC)
    out += struct.pack("<I", VERSION)
    cfg = json.dumps(_config_of(model), sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(cfg)) + cfg
    params = model.parameters()
    out += struct.pack("<I", len(params))
    for p in params:
        name = p.name.encode("utf-8")
        dt = p.data.dtype.newbyteorder("<")
        if dt not in _CODES:
            raise FormatError(f"cannot store dtype {p.data.dtype} of {p.name}")
        out += struct.pack("<H", len(name)) + name
        out += struct.pack("<BB", _CODES[dt], p.data.ndim)
        out += struct.pack(f"<{p.data.ndim}I", *p.data.shape)
        out += np.ascontiguousarray(p.data, dtype=dt).tobytes()
    out += struct.pack("<I", zlib.crc32(bytes(out)))
    return bytes(out)


def save_checkpoint(model, path) -> None:
    data = encode_checkpoint(model)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.raw):
            raise FormatError(f"checkpoint ends early at byte {len(self.raw)}")
        chunk = self.raw[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(raw: bytes):
    """Returns (config dict, {name: array}). Checks magic, version, CRC."""
    if raw[:4] != MAGIC:
        raise FormatError(f"not a checkpoint: magic bytes {raw[:4]!r}")
    if len(raw) < 12:
        raise ChecksumError("checkpoint truncated")
    (stored,) = struct.unpack("<I", raw[-4:])
    if zlib.crc32(raw[:-4]) != stored:
        raise ChecksumError("checkpoint CRC-32 mismatch (file truncated or corrupted)")
    rd = _Reader(raw[:-4])
    rd.take(4)
    (version,) = rd.unpack("<I")
    if version != VERSION:
        raise VersionError(f"checkpoint version {version}, this build reads {VERSION}")
    (n,) = rd.unpack("<I")
    config = json.loads(rd.take(n).decode("utf-8"))
    (count,) = rd.unpack("<I")
    state = {}
    for _ in range(count):
        (ln,) = rd.unpack("<H")
        name = rd.take(ln).decode("utf-8")
        code, ndim = rd.unpack("<BB")
        if code not in _DTYPES:
            raise FormatError(f"unknown dtype code {code} for {name}")
        shape = rd.unpack(f"<{ndim}I")
        dt = _DTYPES[code]
        size = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        state[name] = np.frombuffer(rd.take(size), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if rd.pos != len(rd.raw):
        raise FormatError(f"{len(rd.raw) - rd.pos} stray bytes after the parameter table")
    return config, state


def load_checkpoint(path):
    """Rebuild the model described by a checkpoint and load its weights."""
    with open(path, "rb") as fh:
        raw = fh.read()
    config, state = decode_checkpoint(raw)
    with precision(config.get("precision", "f64")):
        model = build_from_config(config)
    model.load_state_dict(state)
    for h, frozen in enumerate(config.get("head_frozen", [])):
        if frozen:
            model.freeze_head(h)
    model.active_head = config.get("active_head", 0)
    model.n_tasks = config.get("n_tasks", 0)
    return model
