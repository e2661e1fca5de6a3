"""Minimal binary tensor file format (`.tns`).

Layout: 8-byte magic ``TNSR0001``, uint32 little-endian rank, rank uint32
dims, one uint8 dtype code (0 = float32, 1 = int32), then the row-major
little-endian payload. Bit-exact round trips are part of the contract.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TNSR0001"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<i4")}
_CODE_FOR_KIND = {"f": 0, "i": 1}


class TensorFormatError(Exception):
    """Raised when a `.tns` file is malformed or inconsistent."""


def write_tensor(path: Path | str, array: np.ndarray) -> Path:
    """Write `array` to `path` as float32 or int32, returning the path."""
    path = Path(path)
    kind = np.asarray(array).dtype.kind
    if kind not in _CODE_FOR_KIND:
        raise TensorFormatError(f"unsupported dtype kind {kind!r} for {path}")
    code = _CODE_FOR_KIND[kind]
    data = np.ascontiguousarray(array, dtype=_DTYPE_CODES[code])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", data.ndim))
        fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
        fh.write(struct.pack("<B", code))
        fh.write(data.tobytes())
    return path


def read_tensor(path: Path | str) -> np.ndarray:
    """Read a `.tns` file, checking magic, header, and payload size."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < len(MAGIC) + 4:
        raise TensorFormatError(f"truncated tensor file: {path}")
    if raw[: len(MAGIC)] != MAGIC:
        raise TensorFormatError(f"bad magic bytes in {path}")
    offset = len(MAGIC)
    (rank,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    if rank > 8:
        raise TensorFormatError(f"implausible rank {rank} in {path}")
    if len(raw) < offset + 4 * rank + 1:
        raise TensorFormatError(f"truncated header in {path}")
    shape = struct.unpack_from(f"<{rank}I", raw, offset)
    offset += 4 * rank
    (code,) = struct.unpack_from("<B", raw, offset)
    offset += 1
    if code not in _DTYPE_CODES:
        raise TensorFormatError(f"unknown dtype code {code} in {path}")
    dtype = _DTYPE_CODES[code]
    count = int(np.prod(shape, dtype=np.int64)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise TensorFormatError(
            f"payload size mismatch in {path}: header implies {expected} bytes, file has {len(raw)}"
        )
    array = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return array.reshape(shape).copy()


def read_header(path: Path | str) -> tuple[tuple[int, ...], str]:
    """Return (shape, dtype name) declared by the file header."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise TensorFormatError(f"bad magic bytes in {path}")
        (rank,) = struct.unpack("<I", fh.read(4))
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        (code,) = struct.unpack("<B", fh.read(1))
    if code not in _DTYPE_CODES:
        raise TensorFormatError(f"unknown dtype code {code} in {path}")
    return shape, _DTYPE_CODES[code].name
