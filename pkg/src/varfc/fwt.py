"""FWT1 weight container.

Layout (little-endian): b"FWT1", u32 entry count, then per entry
u16 name length, UTF-8 name, u8 dtype (0 = f32), u8 ndim, ndim x u32 dims,
raw f32 payload.
"""
from __future__ import annotations

import io
import struct
from typing import BinaryIO

import numpy as np

MAGIC = b"FWT1"
_DTYPES = {0: np.dtype("<f4")}


class FormatError(ValueError):
    pass


def write_fwt(fh: BinaryIO, tensors: dict[str, np.ndarray]) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise FormatError(f"name too long: {name[:40]}...")
        arr = np.asarray(arr, dtype="<f4", order="C")  # keeps 0-d scalars 0-d
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<BB", 0, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def _read_exact(fh: BinaryIO, n: int) -> bytes:
    b = fh.read(n)
    if len(b) != n:
        raise FormatError("truncated FWT1 data")
    return b


def read_fwt(fh: BinaryIO) -> dict[str, np.ndarray]:
    if _read_exact(fh, 4) != MAGIC:
        raise FormatError("bad magic, not an FWT1 file")
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
        name = _read_exact(fh, nlen).decode("utf-8")
        dtype_code, ndim = struct.unpack("<BB", _read_exact(fh, 2))
        if dtype_code not in _DTYPES:
            raise FormatError(f"unsupported dtype code {dtype_code} for {name}")
        dims = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim))
        dt = _DTYPES[dtype_code]
        n = int(np.prod(dims, dtype=np.int64))
        arr = np.frombuffer(_read_exact(fh, n * dt.itemsize), dtype=dt).reshape(dims)
        if name in out:
            raise FormatError(f"duplicate entry {name}")
        out[name] = arr.astype(np.float32)
    return out


def save_weights(path, tensors: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        write_fwt(fh, tensors)


def load_weights(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return read_fwt(fh)


def dumps(tensors: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    write_fwt(buf, tensors)
    return buf.getvalue()


def loads(data: bytes) -> dict[str, np.ndarray]:
    return read_fwt(io.BytesIO(data))
