"""VFCB container: fixed header followed by a rANS payload.

Header (little-endian): b"VFCB", u8 version, u8 config_k, f32 lambda, u8 ndim,
ndim x u16 dims, u32 table checksum, u32 payload length.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .entropy import EntropyTables
from .rans import CorruptPayload, rans_decode, rans_encode

MAGIC = b"VFCB"
VERSION = 1


class BitstreamError(ValueError):
    code = "format"


class BadMagic(BitstreamError):
    code = "magic"


class BadVersion(BitstreamError):
    code = "version"


class TableMismatch(BitstreamError):
    code = "tables"


class Truncated(BitstreamError):
    code = "truncated"


@dataclass(frozen=True)
class Header:
    config_k: int
    lam: float
    dims: tuple
    checksum: int
    payload_len: int

    @property
    def size(self) -> int:
        return header_size(len(self.dims))


def header_size(ndim: int) -> int:
    return 4 + 1 + 1 + 4 + 1 + 2 * ndim + 4 + 4


def channel_ids(dims: tuple) -> np.ndarray:
    """Channel index of each element of a C-ordered (C, ...) array."""
    per = int(np.prod(dims[1:], dtype=np.int64)) if len(dims) > 1 else 1
    return np.repeat(np.arange(dims[0], dtype=np.int64), per)


def pack_bitstream(symbols: np.ndarray, lam: float, config_k: int, tables: EntropyTables) -> bytes:
    """``symbols``: integer array (C, H, W) for one image, already clamped."""
    symbols = np.asarray(symbols)
    dims = symbols.shape
    if not dims or dims[0] != tables.channels:
        raise ValueError(f"leading dim must be the {tables.channels} table channels, got {dims}")
    if any(d > 0xFFFF for d in dims) or len(dims) > 255:
        raise ValueError(f"dims {dims} do not fit the header")
    payload = rans_encode(symbols.reshape(-1), channel_ids(dims), tables)
    head = MAGIC + struct.pack("<BBfB", VERSION, config_k, lam, len(dims))
    head += struct.pack(f"<{len(dims)}H", *dims)
    head += struct.pack("<II", tables.checksum, len(payload))
    return head + payload


def parse_header(data: bytes) -> Header:
    if len(data) < 11:
        raise Truncated("stream shorter than the fixed header")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    version, k, lam, ndim = struct.unpack_from("<BBfB", data, 4)
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    size = header_size(ndim)
    if len(data) < size:
        raise Truncated("stream shorter than its header")
    dims = struct.unpack_from(f"<{ndim}H", data, 11)
    checksum, plen = struct.unpack_from("<II", data, 11 + 2 * ndim)
    return Header(k, lam, tuple(dims), checksum, plen)


def unpack_bitstream(data: bytes, tables: EntropyTables) -> tuple[np.ndarray, float, int]:
    """Returns (symbols with header dims, lambda as decoded f32, config_k)."""
    h = parse_header(data)
    if h.checksum != tables.checksum:
        raise TableMismatch("table mismatch: stream was coded with different entropy tables")
    payload = data[h.size:]
    if len(payload) != h.payload_len:
        raise Truncated(f"payload is {len(payload)} bytes, header says {h.payload_len}")
    if not h.dims or h.dims[0] != tables.channels:
        raise BitstreamError(f"dims {h.dims} do not match {tables.channels} table channels")
    n = int(np.prod(h.dims, dtype=np.int64))
    try:
        symbols = rans_decode(payload, n, channel_ids(h.dims), tables)
    except CorruptPayload as e:
        raise BitstreamError(f"corrupt payload: {e}") from e
    return symbols.reshape(h.dims), h.lam, h.config_k
