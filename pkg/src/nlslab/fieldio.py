"""Binary field snapshots with a JSON sidecar.

A snapshot is a single .bin file: a fixed 24-byte header (magic, endianness
tag, grid size, box length) followed by the samples as interleaved re/im
float64 pairs in row-major order.  Scalars and payload are always written
little-endian; the tag lets a reader reject or byte-swap foreign files.  Next
to the .bin a .json sidecar records the grid and a SHA-256 of the payload so
a snapshot can be audited without parsing the binary.  Round trips are
bit-exact: save followed by load returns the identical sample bytes.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .spectral import Field, Grid

_MAGIC = b"NLSFLD01"
# 8s magic, c endianness tag, 3 pad bytes, u4 grid size, f8 box length.
_HEADER = struct.Struct("<8sc3xId")


def _sidecar_path(path: Path) -> Path:
    return path.with_suffix(".json")


def save_field(path, field: Field, extra: dict | None = None) -> Path:
    """Write a field to path (.bin) plus a .json sidecar; returns the .bin path."""
    path = Path(path)
    if path.suffix != ".bin":
        path = path.with_suffix(".bin")
    payload = np.ascontiguousarray(field.values, dtype="<c16").tobytes()
    header = _HEADER.pack(_MAGIC, b"<", field.grid.n, field.grid.box_length)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
    meta = {
        "format": _MAGIC.decode(),
        "n": field.grid.n,
        "box_length": field.grid.box_length,
        "dtype": "complex128",
        "layout": "row-major interleaved re/im",
        "byte_order": "little",
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    if extra:
        meta.update(extra)
    with open(_sidecar_path(path), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def load_field(path) -> Field:
    """Read a field written by save_field; validates header and payload size."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, endian, n, box_length = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    payload = raw[_HEADER.size :]
    expected = 16 * n**3
    if len(payload) != expected:
        raise ValueError(
            f"{path}: payload is {len(payload)} bytes, expected {expected}"
        )
    dtype = "<c16" if endian == b"<" else ">c16"
    values = np.frombuffer(payload, dtype=dtype).astype(np.complex128)
    return Field(Grid(n, box_length), values.reshape(n, n, n))
