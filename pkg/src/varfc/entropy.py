"""Fully factorized learned prior, quantisation and integer coding tables."""
from __future__ import annotations

import math
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Module, Parameter
from .tensor import NonFiniteError, Tensor

LIKELIHOOD_FLOOR = 2.0 ** -24


@dataclass(frozen=True)
class QuantGrid:
    s_min: int = -128
    s_max: int = 127

    @property
    def size(self) -> int:
        return self.s_max - self.s_min + 1


class FactorizedDensity(Module):
    """Per-channel monotone CDF c(x) = sigmoid(f(x)), f a chain of tiny affine maps.

    Matrices pass through softplus so every stage is non-decreasing; the gates
    tanh(a) * tanh(x) have slope >= -1, which keeps the composition monotone.
    """

    def __init__(self, channels: int, filters=(3, 3, 3), init_scale: float = 10.0, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        widths = (1,) + tuple(filters) + (1,)
        self.widths = widths
        scale = init_scale ** (1.0 / (len(widths) - 1))
        self.matrices, self.biases, self.factors = [], [], []
        for i in range(len(widths) - 1):
            init = math.log(math.expm1(1.0 / scale / widths[i + 1]))
            m = Parameter(np.full((channels, widths[i + 1], widths[i]), init, np.float32))
            b = Parameter(rng.uniform(-0.5, 0.5, (channels, widths[i + 1], 1)).astype(np.float32))
            setattr(self, f"matrix{i}", m)
            setattr(self, f"bias{i}", b)
            self.matrices.append(m)
            self.biases.append(b)
            if i < len(widths) - 2:
                f = Parameter(np.zeros((channels, widths[i + 1], 1), np.float32))
                setattr(self, f"factor{i}", f)
                self.factors.append(f)

    def logits_cumulative(self, x: Tensor) -> Tensor:
        """x: (C, 1, M) -> logits of c(x), same shape."""
        n = len(self.matrices)
        for i in range(n):
            x = T.matmul(T.softplus(self.matrices[i]), x) + self.biases[i]
            if i < n - 1:
                x = x + T.tanh(self.factors[i]) * T.tanh(x)
        return x

    def logits_numpy(self, x: np.ndarray) -> np.ndarray:
        """Float64 evaluation without graph building; x: (C, M)."""
        h = np.asarray(x, np.float64)[:, None, :]
        n = len(self.matrices)
        for i in range(n):
            m = self.matrices[i].data.astype(np.float64)
            sp = np.maximum(m, 0) + np.log1p(np.exp(-np.abs(m)))
            h = sp @ h + self.biases[i].data.astype(np.float64)
            if i < n - 1:
                h = h + np.tanh(self.factors[i].data.astype(np.float64)) * np.tanh(h)
        return h[:, 0, :]

    def cdf(self, x: np.ndarray) -> np.ndarray:
        return 0.5 * (1.0 + np.tanh(0.5 * self.logits_numpy(x)))


def add_uniform_noise(z: Tensor, rng: np.random.Generator) -> Tensor:
    """Training proxy for rounding: z + U(-0.5, 0.5), i.i.d. per element."""
    u = rng.uniform(-0.5, 0.5, z.shape).astype(z.dtype)
    return z + u


def likelihood(z: Tensor, density: FactorizedDensity) -> Tensor:
    """P(z - 0.5 < Z < z + 0.5) per element of NCHW ``z``."""
    n, c, h, w = z.shape
    if c != density.channels:
        raise ValueError(f"density has {density.channels} channels, input has {c}")
    v = z.transpose(1, 0, 2, 3).reshape(c, 1, n * h * w)
    upper = density.logits_cumulative(v + 0.5)
    lower = density.logits_cumulative(v - 0.5)
    # evaluate on the side of the sigmoid where it is not saturated
    s = np.where(upper.data + lower.data > 0, -1.0, 1.0).astype(z.dtype)
    lik = (T.sigmoid(upper * s) - T.sigmoid(lower * s)) * s
    return lik.reshape(c, n, h, w).transpose(1, 0, 2, 3)


def rate_bits(z: Tensor, density: FactorizedDensity) -> Tensor:
    """Bits per image, shape (N,): sum of -log2(likelihood + 2^-24)."""
    lik = likelihood(z, density)
    if not np.isfinite(lik.data).all():
        raise NonFiniteError("non-finite density in rate computation")
    bits = T.log(lik + LIKELIHOOD_FLOOR) * (-1.0 / math.log(2.0))
    return bits.reshape(z.shape[0], -1).sum(axis=1)


def quantize(z: np.ndarray, grid: QuantGrid = QuantGrid()) -> tuple[np.ndarray, int]:
    """Round half away from zero, then clamp; returns (symbols, clamp count)."""
    z = np.asarray(z)
    r = np.sign(z) * np.floor(np.abs(z) + 0.5)
    clamped = int(np.count_nonzero((r < grid.s_min) | (r > grid.s_max)))
    return np.clip(r, grid.s_min, grid.s_max).astype(np.int32), clamped


@dataclass(frozen=True)
class EntropyTables:
    freq: np.ndarray  # (C, S) int64, each row sums to 2**precision
    cum: np.ndarray   # (C, S + 1) int64
    s_min: int
    precision: int
    checksum: int

    @property
    def channels(self) -> int:
        return self.freq.shape[0]

    @property
    def grid(self) -> QuantGrid:
        return QuantGrid(self.s_min, self.s_min + self.freq.shape[1] - 1)

    @classmethod
    def from_freq(cls, freq: np.ndarray, s_min: int, precision: int) -> "EntropyTables":
        freq = np.asarray(freq, dtype=np.int64)
        if freq.ndim != 2:
            raise ValueError("frequency table must be 2-d (channels, symbols)")
        if (freq < 1).any() or (freq.sum(axis=1) != (1 << precision)).any():
            raise ValueError("every frequency must be >= 1 and each row must sum to 2**precision")
        cum = np.zeros((freq.shape[0], freq.shape[1] + 1), np.int64)
        np.cumsum(freq, axis=1, out=cum[:, 1:])
        return cls(freq, cum, int(s_min), int(precision), table_checksum(freq, s_min, precision))


def table_checksum(freq: np.ndarray, s_min: int, precision: int) -> int:
    head = struct.pack("<iIII", s_min, precision, *freq.shape)
    return zlib.crc32(head + np.ascontiguousarray(freq, "<u4").tobytes()) & 0xFFFFFFFF


def quantize_pmf(pmf: np.ndarray, precision: int = 16) -> np.ndarray:
    """Integer frequencies >= 1 summing to 2**precision.

    Floor p * 2**precision, lift zeros to 1, then repair the sum by largest
    remainder: a shortfall goes to the symbols that lost most to flooring, an
    excess is taken from the symbols rounded up furthest (never below 1).
    Ties break towards the lower symbol index.
    """
    pmf = np.asarray(pmf, np.float64)
    nsym = pmf.shape[-1]
    total_f = 1 << precision
    if total_f < nsym:
        raise ValueError(f"precision {precision} cannot give {nsym} symbols a nonzero frequency "
                         f"(needs >= {math.ceil(math.log2(nsym))})")
    if not np.isfinite(pmf).all():
        raise ValueError("pmf contains non-finite values")
    pmf = np.atleast_2d(np.clip(pmf, 0.0, None))
    total = pmf.sum(axis=-1, keepdims=True)
    # a row with no mass at all falls back to uniform
    pmf = np.where(total > 0, pmf / np.where(total > 0, total, 1.0), 1.0 / nsym)
    scaled = pmf * total_f
    freq = np.maximum(np.floor(scaled).astype(np.int64), 1)
    for row in range(freq.shape[0]):
        f, x = freq[row], scaled[row]
        while (gap := total_f - int(f.sum())) != 0:
            over = f - x  # > 0 where rounded up
            if gap > 0:
                pick = np.argsort(over, kind="stable")[:gap]
                f[pick] += 1
            else:
                order = np.argsort(-over, kind="stable")
                pick = order[f[order] > 1][:-gap]
                f[pick] -= 1
    return freq

def discrete_pmf(density: FactorizedDensity, grid: QuantGrid = QuantGrid()) -> np.ndarray:
    """P(symbol) per channel; the edge symbols absorb the tails so rows sum to 1."""
    c = density.channels
    s = np.arange(grid.s_min, grid.s_max + 1, dtype=np.float64)
    upper = density.logits_numpy(np.broadcast_to(s + 0.5, (c, s.size)))
    lower = density.logits_numpy(np.broadcast_to(s - 0.5, (c, s.size)))
    upper[:, -1] = np.inf
    lower[:, 0] = -np.inf
    sign = np.where(upper + lower > 0, -1.0, 1.0)
    sig = lambda v: 0.5 * (1.0 + np.tanh(0.5 * v))  # noqa: E731
    with np.errstate(invalid="ignore"):
        p = sign * (sig(sign * upper) - sig(sign * lower))
    return np.clip(p, 0.0, None)


def build_tables(density: FactorizedDensity, grid: QuantGrid = QuantGrid(), precision: int = 16) -> EntropyTables:
    return EntropyTables.from_freq(quantize_pmf(discrete_pmf(density, grid), precision), grid.s_min, precision)


def table_kl_bits(pmf: np.ndarray, tables: EntropyTables) -> np.ndarray:
    """Coding overhead of the integer tables, in bits per symbol, one value per channel.

    This is KL(model || quantized): the expected extra length when symbols drawn
    from ``pmf`` are coded with ``tables``.
    """
    q = tables.freq / float(1 << tables.precision)
    p = np.asarray(pmf, np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log2(p / q), 0.0)
    return terms.sum(axis=1)
