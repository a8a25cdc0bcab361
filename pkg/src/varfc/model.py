"""Split classifier + variable-rate autoencoder + factorized prior as one model."""
from __future__ import annotations

import numpy as np

from . import fwt
from . import tensor as T
from .autoencoder import LAMBDA_MAX, LAMBDA_MIN, C_TOTAL, Autoencoder, AutoencoderSpec
from .bitstream import pack_bitstream, unpack_bitstream
from .classifier import Classifier, ClassifierSpec, split
from .entropy import (EntropyTables, FactorizedDensity, QuantGrid, add_uniform_noise,
                      build_tables, quantize, rate_bits)
from .nn import Module
from .tensor import Tensor


def f32(x: float) -> float:
    return float(np.float32(x))


class VariableRateModel(Module):
    """Edge front-end, lambda-conditioned autoencoder with entropy model, cloud back-end.

    With ``compression=False`` the autoencoder is absent and the split feature
    goes straight to the cloud half (the uncompressed baseline).
    """

    def __init__(self, config_k: int = 1, spec: ClassifierSpec = ClassifierSpec(),
                 c_total: int = C_TOTAL, lambda_min: float = LAMBDA_MIN,
                 lambda_max: float = LAMBDA_MAX, compression: bool = True,
                 embed_dim: int = 64, seed: int = 0, grid: QuantGrid = QuantGrid()):
        self.config_k = config_k
        self.compression = compression
        self.grid = grid
        self.classifier = Classifier(spec, seed)
        self._split = split(self.classifier, config_k)
        self.tables: EntropyTables | None = None
        self.clamp_events = 0
        if compression:
            rng = np.random.default_rng(seed + 1)
            self.ae_spec = AutoencoderSpec(self._split.split_shape, c_total)
            self.autoencoder = Autoencoder(self.ae_spec, lambda_min, lambda_max, embed_dim, rng=rng)
            self.entropy = FactorizedDensity(self.ae_spec.beta, rng=rng)

    # -- metadata ---------------------------------------------------------
    @property
    def spec(self) -> ClassifierSpec:
        return self.classifier.spec

    @property
    def split_config(self):
        return self._split

    @property
    def lambda_range(self) -> tuple[float, float]:
        e = self.autoencoder.embedding
        return e.lambda_min, e.lambda_max

    @property
    def pixels(self) -> int:
        _, h, w = self.spec.input_shape
        return h * w

    # -- training path ----------------------------------------------------
    def forward_train(self, x: Tensor, lam: float, rng: np.random.Generator):
        """Noise-proxy forward. Returns (logits, bits per image or None)."""
        feat = self._split.forward_edge(x)
        if not self.compression:
            return self._split.forward_cloud(feat), None
        e = self.autoencoder.embed_lambda(f32(lam))
        z = self.autoencoder.encode(feat, e)
        z_tilde = add_uniform_noise(z, rng)
        bits = rate_bits(z_tilde, self.entropy)
        x_hat = self.autoencoder.decode(z_tilde, e)
        return self._split.forward_cloud(x_hat), bits

    def forward(self, x: Tensor) -> Tensor:
        """Unsplit classifier logits (compression bypassed)."""
        return self.classifier(x)

    # -- inference path ---------------------------------------------------
    def edge_features(self, images: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self._split.forward_edge(Tensor(images)).data

    def encode_symbols(self, feat: np.ndarray, lam: float) -> np.ndarray:
        """Quantised, clamped bottleneck symbols (N, beta, H/2, W/2)."""
        with T.no_grad():
            e = self.autoencoder.embed_lambda(f32(lam))
            z = self.autoencoder.encode(Tensor(feat), e).data
        sym, clamped = quantize(z, self.grid)
        self.clamp_events += clamped
        return sym

    def decode_symbols(self, symbols: np.ndarray, lam: float) -> np.ndarray:
        """Logits from integer symbols."""
        with T.no_grad():
            e = self.autoencoder.embed_lambda(f32(lam))
            x_hat = self.autoencoder.decode(Tensor(symbols.astype(self._dtype())), e)
            return self._split.forward_cloud(x_hat).data

    def cloud_logits(self, feat: np.ndarray) -> np.ndarray:
        with T.no_grad():
            return self._split.forward_cloud(Tensor(feat)).data

    def predict(self, images: np.ndarray, lam: float | None = None) -> np.ndarray:
        """Logits of the deployed pipeline (rounding instead of noise)."""
        feat = self.edge_features(images)
        if not self.compression:
            return self.cloud_logits(feat)
        return self.decode_symbols(self.encode_symbols(feat, lam), lam)

    def estimated_bits(self, symbols: np.ndarray) -> np.ndarray:
        """Model rate of integer symbols, bits per image (float64)."""
        with T.no_grad():
            return rate_bits(Tensor(symbols.astype(np.float64)), self._density64()).data

    def _density64(self) -> FactorizedDensity:
        d = FactorizedDensity(self.entropy.channels)
        d.load_state_dict(self.entropy.state_dict())
        return d.astype(np.float64)

    def _dtype(self):
        return self.classifier.stem.conv.weight.dtype

    # -- entropy coding ---------------------------------------------------
    def update_tables(self, precision: int = 16) -> EntropyTables:
        self.tables = build_tables(self.entropy, self.grid, precision)
        return self.tables

    def require_tables(self) -> EntropyTables:
        if self.tables is None:
            self.update_tables()
        return self.tables

    def pack(self, symbols: np.ndarray, lam: float) -> bytes:
        return pack_bitstream(symbols, f32(lam), self.config_k, self.require_tables())

    def unpack(self, data: bytes):
        return unpack_bitstream(data, self.require_tables())

    # -- persistence ------------------------------------------------------
    def to_tensors(self) -> dict[str, np.ndarray]:
        s = self.spec
        meta = {
            "meta.config_k": [self.config_k],
            "meta.compression": [1.0 if self.compression else 0.0],
            "meta.stages": np.array(s.stages, np.float32),
            "meta.stem_channels": [s.stem_channels],
            "meta.num_classes": [s.num_classes],
            "meta.input_shape": list(s.input_shape),
            "meta.grid": [self.grid.s_min, self.grid.s_max],
        }
        out = {k: np.asarray(v, np.float32) for k, v in meta.items()}
        if self.compression:
            lo, hi = self.lambda_range
            out["meta.lambda_range"] = np.array([lo, hi], np.float32)
            out["meta.c_total"] = np.array([self.ae_spec.c_total], np.float32)
            out["meta.embed_dim"] = np.array([self.autoencoder.embedding.embed_dim], np.float32)
            t = self.require_tables()
            out["tables.freq"] = t.freq.astype(np.float32)
            out["tables.precision"] = np.array([t.precision], np.float32)
        for name, arr in self.state_dict().items():
            out[name] = arr
        return out

    def save(self, path) -> None:
        fwt.save_weights(path, self.to_tensors())

    @classmethod
    def from_tensors(cls, d: dict[str, np.ndarray]) -> "VariableRateModel":
        try:
            stages = tuple(tuple(int(v) for v in row) for row in d["meta.stages"])
            spec = ClassifierSpec(stages, int(d["meta.stem_channels"][0]), int(d["meta.num_classes"][0]),
                                  tuple(int(v) for v in d["meta.input_shape"]))
            compression = bool(d["meta.compression"][0])
            kw = {}
            if compression:
                kw = dict(c_total=int(d["meta.c_total"][0]), lambda_min=float(d["meta.lambda_range"][0]),
                          lambda_max=float(d["meta.lambda_range"][1]), embed_dim=int(d["meta.embed_dim"][0]))
            g = d["meta.grid"]
            model = cls(int(d["meta.config_k"][0]), spec, compression=compression,
                        grid=QuantGrid(int(g[0]), int(g[1])), **kw)
        except KeyError as e:
            raise fwt.FormatError(f"model file lacks {e}") from e
        model.load_state_dict({k: v for k, v in d.items() if not k.startswith(("meta.", "tables."))})
        if compression:
            freq = d["tables.freq"].astype(np.int64)
            model.tables = EntropyTables.from_freq(freq, model.grid.s_min, int(d["tables.precision"][0]))
        return model

    @classmethod
    def load(cls, path) -> "VariableRateModel":
        return cls.from_tensors(fwt.load_weights(path))
