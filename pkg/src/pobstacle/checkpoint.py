"""Binary field files ("POBF") and atomic text/JSON writers.

Layout, all little-endian: magic ``b"POBF"``, ``u32`` version, ``u32`` n,
``n + 1`` ``u64`` node counts (space axes then time), ``f64`` h, ``f64`` tau,
``n`` ``f64`` spatial lower corner, then the row-major ``f64`` payload.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .lattice import GridField, LatticeDomain

__all__ = ["MAGIC", "VERSION", "write_field", "read_field", "atomic_write_text",
           "atomic_write_bytes", "write_json", "field_bytes"]

MAGIC = b"POBF"
VERSION = 1


def field_bytes(field: GridField) -> bytes:
    dom = field.domain
    head = MAGIC + struct.pack("<II", VERSION, dom.n)
    head += struct.pack(f"<{dom.n + 1}Q", *dom.shape)
    head += struct.pack(f"<2d{dom.n}d", dom.h, dom.tau, *[float(v) for v in dom.spatial_low])
    payload = np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C")
    return head + payload


def atomic_write_bytes(path, data: bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def atomic_write_text(path, text: str) -> Path:
    return atomic_write_bytes(path, text.encode("utf-8"))


def write_json(path, obj) -> Path:
    return atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_field(path, field: GridField, sidecar: dict | None = None) -> Path:
    """Write ``field`` to ``path``; ``sidecar`` (if given) goes to ``path`` with ``.json``."""
    path = atomic_write_bytes(path, field_bytes(field))
    if sidecar is not None:
        write_json(path.with_suffix(".json"), sidecar)
    return path


def read_field(path) -> GridField:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a POBF field file")
    try:
        version, n = struct.unpack_from("<II", data, 4)
        if version != VERSION:
            raise ValueError(f"{path}: unsupported POBF version {version}")
        if n not in (1, 2):
            raise ValueError(f"{path}: bad dimension {n}")
        off = 12
        dims = struct.unpack_from(f"<{n + 1}Q", data, off)
        off += 8 * (n + 1)
        h, tau, *low = struct.unpack_from(f"<2d{n}d", data, off)
        off += 8 * (2 + n)
    except struct.error:
        raise ValueError(f"{path}: truncated header") from None
    count = int(np.prod(dims))
    if len(data) - off != 8 * count:
        raise ValueError(f"{path}: payload size does not match header")
    values = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(dims)
    high = [lo + h * (k - 1) for lo, k in zip(low, dims[:n])]
    dom = LatticeDomain.box(low, high, tau * (dims[n] - 1), h, tau)
    if dom.shape != tuple(dims):
        raise ValueError(f"{path}: header does not describe a consistent lattice")
    return GridField(dom, values.astype(float))
