"""Native tensor file format.

Layout (all little-endian)::

    magic   4 bytes  b"VTNS"
    dtype   1 byte   code from ``_DTYPES``
    rank    1 byte
    pad     2 bytes  zero
    dims    rank x uint64
    payload row-major, prod(dims) * itemsize bytes
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import TensorFormatError

MAGIC = b"VTNS"

_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("u1"),
    3: np.dtype("<i4"),
    4: np.dtype("<i8"),
}
_CODES = {(dt.kind, dt.itemsize): code for code, dt in _DTYPES.items()}


def write_tensor(path: str | os.PathLike, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = _CODES.get((array.dtype.kind, array.dtype.itemsize))
    if code is None:
        raise TensorFormatError(f"unsupported dtype {array.dtype}")
    if array.ndim > 255:
        raise TensorFormatError("rank too large")
    header = MAGIC + struct.pack("<BBxx", code, array.ndim)
    header += struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes(order="C")
    Path(path).write_bytes(header + payload)


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"tensor file not found: {path}")
    raw = path.read_bytes()
    if len(raw) < 8 or raw[:4] != MAGIC:
        raise TensorFormatError(f"{path}: bad magic or truncated header")
    code, rank = struct.unpack("<BBxx", raw[4:8])
    if code not in _DTYPES:
        raise TensorFormatError(f"{path}: unknown dtype code {code}")
    dims_end = 8 + 8 * rank
    if len(raw) < dims_end:
        raise TensorFormatError(f"{path}: truncated dimension block")
    dims = struct.unpack(f"<{rank}Q", raw[8:dims_end])
    dtype = _DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - dims_end != expected:
        raise TensorFormatError(
            f"{path}: payload has {len(raw) - dims_end} bytes, header implies {expected}"
        )
    return np.frombuffer(raw, dtype=dtype, offset=dims_end).reshape(dims).copy()
