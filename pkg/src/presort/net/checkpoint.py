"""Versioned checkpoint container.

Layout (little-endian)::

    b"PSCK" | u32 version | u32 header_len | header JSON (utf-8)
    u32 n_tensors
    per tensor: u16 name_len | name | u8 ndim | u32 dims... | float32 data (row-major)
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .model import NetConfig, Network

MAGIC = b"PSCK"
VERSION = 1


def save_checkpoint(model: Network, path, meta: dict | None = None) -> None:
    header = json.dumps({"net": model.cfg.to_dict(), "meta": meta or {}}, sort_keys=True).encode()
    state = model.state_dict()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(struct.pack("<I", len(state)))
        for name in sorted(state):
            arr = state[name]
            raw = name.encode()
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[Network, dict]:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    header = json.loads(raw[pos:pos + hlen].decode())
    pos += hlen
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    state = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        state[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=pos).reshape(shape).copy()
        pos += 4 * size
    net = Network(NetConfig.from_dict(header["net"]))
    net.load_state_dict(state)
    return net, header.get("meta", {})
