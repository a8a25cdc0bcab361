"""Lambda-conditioned compressive autoencoder placed at the split point."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, ConvTranspose2d, Linear, Module
from .tensor import Tensor

LAMBDA_MIN = 1e-4
LAMBDA_MAX = 5.12
C_TOTAL = 4096


class LambdaRangeError(ValueError):
    pass


@dataclass(frozen=True)
class AutoencoderSpec:
    split_shape: tuple  # (C, H, W) at the split point
    c_total: int = C_TOTAL

    def __post_init__(self):
        c, h, w = self.split_shape
        if h % 2 or w % 2:
            raise ValueError(f"split feature {h}x{w} must have even spatial dims")
        if self.c_total % ((h // 2) * (w // 2)):
            raise ValueError(
                f"bottleneck budget {self.c_total} not divisible by {h // 2}x{w // 2} positions")

    @property
    def beta(self) -> int:
        _, h, w = self.split_shape
        return self.c_total // ((h // 2) * (w // 2))

    @property
    def bottleneck_shape(self) -> tuple:
        _, h, w = self.split_shape
        return (self.beta, h // 2, w // 2)


class LambdaEmbedding(Module):
    """Two-layer MLP on the log-normalised rate parameter."""

    def __init__(self, lambda_min=LAMBDA_MIN, lambda_max=LAMBDA_MAX, embed_dim=64, hidden=64, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        # f32-rounded so a model loaded from disk normalises identically
        self.lambda_min = float(np.float32(lambda_min))
        self.lambda_max = float(np.float32(lambda_max))
        self.embed_dim = embed_dim
        self.fc1 = Linear(1, hidden, rng=rng)
        self.fc2 = Linear(hidden, embed_dim, rng=rng)

    def normalize(self, lam: float) -> float:
        lam = float(lam)
        if not (lam > 0) or lam > self.lambda_max * (1 + 1e-6):
            raise LambdaRangeError(f"lambda={lam!r} outside (0, {self.lambda_max}]")
        lo, hi = np.log(self.lambda_min), np.log(self.lambda_max)
        if hi == lo:
            return 0.0
        return float((np.log(lam) - lo) / (hi - lo))

    def forward(self, lam: float) -> Tensor:
        t = np.array([[self.normalize(lam)]], dtype=self.fc1.weight.dtype)
        return self.fc2(T.gelu(self.fc1(Tensor(t))))


class AdaLNBlock(Module):
    """ConvNeXt block whose layer-norm scale/shift are predicted from the lambda embedding.

    h' = h + proj(GeLU(expand((1 + scale) * LN(dwconv(h)) + shift)))
    """

    def __init__(self, channels: int, embed_dim: int = 64, expansion: int = 4, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.channels = channels
        self.dwconv = Conv2d(channels, channels, 7, groups=channels, rng=rng)
        self.modulation = Linear(embed_dim, 2 * channels, zero_init=True, rng=rng)
        self.expand = Conv2d(channels, expansion * channels, 1, padding=0, rng=rng)
        self.proj = Conv2d(expansion * channels, channels, 1, padding=0, zero_init=True, rng=rng)
        self.conditioned = True

    def forward(self, h: Tensor, lam_embed: Tensor) -> Tensor:
        if h.shape[1] != self.channels:
            raise ValueError(f"block expects {self.channels} channels, got {h.shape[1]}")
        y = T.layer_norm(self.dwconv(h), axis=1)
        if self.conditioned:
            c = self.channels
            mod = self.modulation(lam_embed)  # (1 or N, 2C)
            scale = mod[:, :c].reshape(-1, c, 1, 1)
            shift = mod[:, c:].reshape(-1, c, 1, 1)
            y = y * (scale + 1.0) + shift
        return h + self.proj(T.gelu(self.expand(y)))


class Encoder(Module):
    def __init__(self, spec: AutoencoderSpec, embed_dim=64, num_blocks=3, rng=None):
        c = spec.split_shape[0]
        self.spec = spec
        self.down = Conv2d(c, c, 3, stride=2, padding=1, rng=rng)
        self.blocks = [AdaLNBlock(c, embed_dim, rng=rng) for _ in range(num_blocks)]
        self.out = Conv2d(c, spec.beta, 1, padding=0, rng=rng)

    def forward(self, x: Tensor, lam_embed: Tensor) -> Tensor:
        if tuple(x.shape[1:]) != tuple(self.spec.split_shape):
            raise ValueError(f"encoder expects (N, {self.spec.split_shape}), got {x.shape}")
        h = self.down(x)
        for b in self.blocks:
            h = b(h, lam_embed)
        return self.out(h)


class Decoder(Module):
    def __init__(self, spec: AutoencoderSpec, embed_dim=64, num_blocks=3, rng=None):
        c = spec.split_shape[0]
        self.spec = spec
        self.inp = Conv2d(spec.beta, c, 1, padding=0, rng=rng)
        self.blocks = [AdaLNBlock(c, embed_dim, rng=rng) for _ in range(num_blocks)]
        self.up = ConvTranspose2d(c, c, 3, stride=2, padding=1, output_padding=1, rng=rng)

    def forward(self, z: Tensor, lam_embed: Tensor) -> Tensor:
        if tuple(z.shape[1:]) != tuple(self.spec.bottleneck_shape):
            raise ValueError(f"decoder expects (N, {self.spec.bottleneck_shape}), got {z.shape}")
        h = self.inp(z)
        for b in self.blocks:
            h = b(h, lam_embed)
        return self.up(h)


class Autoencoder(Module):
    def __init__(self, spec: AutoencoderSpec, lambda_min=LAMBDA_MIN, lambda_max=LAMBDA_MAX,
                 embed_dim=64, rng=None):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.spec = spec
        self.embedding = LambdaEmbedding(lambda_min, lambda_max, embed_dim, rng=rng)
        self.enc = Encoder(spec, embed_dim, rng=rng)
        self.dec = Decoder(spec, embed_dim, rng=rng)

    def embed_lambda(self, lam: float) -> Tensor:
        return self.embedding(lam)

    def encode(self, x: Tensor, lam_embed: Tensor) -> Tensor:
        return self.enc(x, lam_embed)

    def decode(self, z: Tensor, lam_embed: Tensor) -> Tensor:
        return self.dec(z, lam_embed)

    def set_conditioning(self, enabled: bool) -> None:
        """Disable to force scale=0/shift=0 (gamma=1, delta=0) in every AdaLN block."""
        for b in self.enc.blocks + self.dec.blocks:
            b.conditioned = enabled
