"""``RNN1`` checkpoint files.

Layout: magic ``RNN1``, u64 header length, UTF-8 JSON header, then every
parameter followed by every buffer as little-endian float32, in the order
the header lists them.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import Layer

MAGIC = b"RNN1"


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: Layer, meta: dict | None = None):
    params = list(model.named_params())
    buffers = list(model.named_buffers())
    header = dict(meta or {})
    header["layers"] = model.spec()
    header["params"] = [[n, list(p.value.shape)] for n, p in params]
    header["buffers"] = [[n, list(b.shape)] for n, b in buffers]
    blob = json.dumps(header).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(p.value.astype("<f4").tobytes())
        for _, b in buffers:
            fh.write(b.astype("<f4").tobytes())


def read_header(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: not an RNN1 checkpoint")
        (n,) = struct.unpack("<Q", fh.read(8))
        return json.loads(fh.read(n))


def load_into(path: str | Path, model: Layer) -> dict:
    """Copy stored values into ``model``; names and shapes must agree."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not an RNN1 checkpoint")
    (n,) = struct.unpack_from("<Q", raw, 4)
    header = json.loads(raw[12:12 + n])
    off = 12 + n
    targets = [(nm, p.value) for nm, p in model.named_params()] + list(model.named_buffers())
    stored = [tuple(e) for e in header["params"]] + [tuple(e) for e in header["buffers"]]
    if [(nm, list(a.shape)) for nm, a in targets] != [(nm, list(s)) for nm, s in stored]:
        raise CheckpointError(f"{path}: parameter layout does not match the model")
    for _, arr in targets:
        cnt = arr.size
        if off + 4 * cnt > len(raw):
            raise CheckpointError(f"{path}: truncated parameter block")
        arr[...] = np.frombuffer(raw, dtype="<f4", count=cnt, offset=off).reshape(arr.shape)
        off += 4 * cnt
    return header
