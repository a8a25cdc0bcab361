"""Single-stream rANS: 32-bit state, 16-bit renormalisation words.

Payload layout: final encoder state as u32 LE, then the emitted 16-bit words
(u16 LE) in the order the decoder consumes them.
"""
from __future__ import annotations

import numpy as np
from numba import njit

from .entropy import EntropyTables

RANS_L = 1 << 16  # lower bound of the normalised state interval


class CorruptPayload(ValueError):
    pass


@njit(cache=True)
def _encode(idx, ch, freq, cum, precision):
    n = idx.shape[0]
    words = np.empty(n, np.uint16)
    pos = 0
    x = np.uint64(RANS_L)
    for i in range(n - 1, -1, -1):
        c = ch[i]
        s = idx[i]
        f = np.uint64(freq[c, s])
        x_max = ((np.uint64(RANS_L) >> np.uint64(precision)) << np.uint64(16)) * f
        if x >= x_max:
            words[pos] = np.uint16(x & np.uint64(0xFFFF))
            pos += 1
            x >>= np.uint64(16)
        x = ((x // f) << np.uint64(precision)) + (x % f) + np.uint64(cum[c, s])
    return x, words[:pos]


@njit(cache=True)
def _decode(words, x0, ch, freq, cum, precision, n):
    out = np.empty(n, np.int64)
    nsym = freq.shape[1]
    mask = np.uint64((1 << precision) - 1)
    x = np.uint64(x0)
    pos = 0
    nw = words.shape[0]
    for i in range(n):
        c = ch[i]
        slot = x & mask
        lo = 0
        hi = nsym
        while hi - lo > 1:
            mid = (lo + hi) >> 1
            if np.uint64(cum[c, mid]) <= slot:
                lo = mid
            else:
                hi = mid
        x = np.uint64(freq[c, lo]) * (x >> np.uint64(precision)) + slot - np.uint64(cum[c, lo])
        if x < np.uint64(RANS_L):
            if pos >= nw:
                return out, x, pos, 1
            x = (x << np.uint64(16)) | np.uint64(words[pos])
            pos += 1
        out[i] = lo
    return out, x, pos, 0


def _prepare(symbols, channels, tables: EntropyTables):
    symbols = np.asarray(symbols, np.int64).reshape(-1)
    channels = np.asarray(channels, np.int64).reshape(-1)
    if symbols.shape != channels.shape:
        raise ValueError("need one channel id per symbol")
    if channels.size and (channels.min() < 0 or channels.max() >= tables.channels):
        raise ValueError(f"channel id outside [0, {tables.channels})")
    return symbols, channels


def rans_encode(symbols, channels, tables: EntropyTables) -> bytes:
    """Encode integer ``symbols`` (each within its channel's grid) to a payload."""
    symbols, channels = _prepare(symbols, channels, tables)
    idx = symbols - tables.s_min
    if idx.size and (idx.min() < 0 or idx.max() >= tables.freq.shape[1]):
        g = tables.grid
        raise ValueError(f"symbol outside grid [{g.s_min}, {g.s_max}]; clamp before coding")
    x, words = _encode(idx, channels, tables.freq, tables.cum, tables.precision)
    return int(x).to_bytes(4, "little") + words[::-1].astype("<u2").tobytes()


def rans_decode(payload: bytes, n_symbols: int, channels, tables: EntropyTables) -> np.ndarray:
    """Inverse of :func:`rans_encode`; raises CorruptPayload on any inconsistency."""
    channels = np.asarray(channels, np.int64).reshape(-1)
    if channels.size != n_symbols:
        raise ValueError("need one channel id per symbol")
    if len(payload) < 4 or (len(payload) - 4) % 2:
        raise CorruptPayload(f"payload length {len(payload)} is not 4 + 2k bytes")
    x0 = int.from_bytes(payload[:4], "little")
    if x0 < RANS_L:
        raise CorruptPayload("initial state below the normalisation bound")
    words = np.frombuffer(payload, "<u2", offset=4).astype(np.uint16)
    idx, x, pos, status = _decode(words, x0, channels, tables.freq, tables.cum, tables.precision, n_symbols)
    if status:
        raise CorruptPayload("payload exhausted before all symbols were decoded")
    if pos != words.size:
        raise CorruptPayload(f"{words.size - pos} unread words after {n_symbols} symbols")
    if int(x) != RANS_L:
        raise CorruptPayload("final state does not match the encoder's initial state")
    return idx + tables.s_min


def ideal_bits(symbols, channels, tables: EntropyTables) -> float:
    """Sum of -log2(f_s / 2**precision) for the given symbols."""
    symbols, channels = _prepare(symbols, channels, tables)
    f = tables.freq[channels, symbols - tables.s_min].astype(np.float64)
    return float(np.sum(tables.precision - np.log2(f)))
