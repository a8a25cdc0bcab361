"""Joint training of classifier, autoencoder and entropy model."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch

from . import tensor as T
from .data import Dataset
from .model import VariableRateModel, f32
from .optim import SGD, cosine_lr
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "lr", "mean_ce", "mean_rate_bpp", "probe_top1")


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lambda_min: float = 1e-4
    lambda_max: float = 5.12
    epochs: int = 15
    batch_size: int = 32
    lr0: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 1e-4
    clip_norm: float = 5.0  # global gradient-norm clip, 0 disables
    entropy_lr_scale: float = 10.0  # density parameters learn slowly at the shared lr
    seed: int = 0
    config_k: int = 1
    mode: str = "variable_rate"  # or "fixed_rate"
    fixed_lambda: float = 0.01
    compression: bool = True
    c_total: int = 4096
    n_train: int = 8000
    n_test: int = 2000
    probe_size: int = 512
    deterministic: bool = True

    def __post_init__(self):
        if not 0 < self.lambda_min <= self.lambda_max:
            raise ConfigError("need 0 < lambda_min <= lambda_max")
        if self.mode not in ("variable_rate", "fixed_rate"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.lr0 <= 0 or self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("lr0 > 0, epochs >= 0 and batch_size >= 1 required")


PRESETS = {
    "toy": {},
    "full": {"epochs": 60},
}


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Line-oriented ``key = value`` text; '#' starts a comment."""
    types = {f.name: f.type for f in fields(TrainConfig)}
    values = asdict(base) if base is not None else {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "preset":
            if val not in PRESETS:
                raise ConfigError(f"line {lineno}: unknown preset {val!r}")
            values.update(PRESETS[val])
            continue
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _coerce(types[key], val, lineno)
    return TrainConfig(**values)


def _coerce(typ: str, val: str, lineno: int):
    try:
        if typ == "bool":
            if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(val)
            return val.lower() in ("true", "1", "yes")
        if typ == "int":
            return int(val)
        if typ == "float":
            return float(val)
        return val
    except ValueError:
        raise ConfigError(f"line {lineno}: cannot read {val!r} as {typ}") from None


def format_config(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def sample_lambda(rng: np.random.Generator, lambda_min: float, lambda_max: float) -> float:
    """Log-uniform draw: ln(lambda) ~ U(ln lambda_min, ln lambda_max)."""
    if lambda_min == lambda_max:
        return float(lambda_min)
    lam = math.exp(rng.uniform(math.log(lambda_min), math.log(lambda_max)))
    return min(max(lam, lambda_min), lambda_max)


def loss_variable(model: VariableRateModel, images: np.ndarray, labels: np.ndarray, lam: float,
                  rng: np.random.Generator):
    """CE + lambda * rate, rate in bits per input pixel. Returns (loss, ce, bpp)."""
    logits, bits = model.forward_train(Tensor(images), lam, rng)
    ce = T.cross_entropy(logits, labels)
    if bits is None:
        return ce, ce, None
    bpp = bits.mean() * (1.0 / model.pixels)
    return ce + bpp * f32(lam), ce, bpp


def loss_fixed(model, images, labels, lam, rng):
    return loss_variable(model, images, labels, lam, rng)


@dataclass
class TrainResult:
    model: VariableRateModel
    log: list = field(default_factory=list)
    lambdas: list = field(default_factory=list)
    steps: int = 0

    def log_csv(self) -> str:
        return format_log(self.log)


def format_log(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"]] + [repr(float(r[c])) for c in LOG_COLUMNS[1:]])
    return buf.getvalue()


def set_determinism(enabled: bool) -> None:
    if enabled:
        torch.set_num_threads(1)


def probe_accuracy(model: VariableRateModel, ds: Dataset, lam: float, batch: int = 128) -> float:
    correct = 0
    for i in range(0, len(ds), batch):
        logits = model.predict(ds.images[i:i + batch], lam)
        correct += int((logits.argmax(1) == ds.labels[i:i + batch]).sum())
    return 100.0 * correct / max(len(ds), 1)


def fit(cfg: TrainConfig, train: Dataset, test: Dataset | None = None, out_dir=None,
        model: VariableRateModel | None = None) -> TrainResult:
    """Train for ``cfg.epochs``; one lambda per batch, cosine lr per epoch.

    Writes ``checkpoint.fwt`` and ``train_log.csv`` into ``out_dir`` after every
    epoch when given.
    """
    set_determinism(cfg.deterministic)
    # late-training grads go denormal and slow conv backward; FTZ is process-wide, so undo it
    torch.set_flush_denormal(True)
    try:
        return _fit(cfg, train, test, out_dir, model)
    finally:
        torch.set_flush_denormal(False)


def _fit(cfg, train, test, out_dir, model) -> TrainResult:
    ss_data, ss_lam, ss_noise = np.random.SeedSequence(cfg.seed).spawn(3)
    rng_data, rng_lam, rng_noise = (np.random.default_rng(s) for s in (ss_data, ss_lam, ss_noise))
    if model is None:
        model = VariableRateModel(cfg.config_k, c_total=cfg.c_total, lambda_min=cfg.lambda_min,
                                  lambda_max=cfg.lambda_max, compression=cfg.compression, seed=cfg.seed)
    opt = SGD(model.named_parameters(), cfg.momentum, cfg.weight_decay, no_decay=_no_decay,
              lr_scale=lambda n: cfg.entropy_lr_scale if n.startswith("entropy.") else 1.0)
    result = TrainResult(model)
    probe = test.subset(cfg.probe_size) if test is not None else train.subset(cfg.probe_size)
    probe_lam = cfg.fixed_lambda if cfg.mode == "fixed_rate" else cfg.lambda_min
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    initial_loss, bad_epochs = None, 0

    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.epochs, cfg.lr0)
        perm = rng_data.permutation(len(train))
        ce_sum = rate_sum = loss_sum = 0.0
        nb = 0
        for start in range(0, len(train), cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            if cfg.mode == "fixed_rate":
                lam = cfg.fixed_lambda
            else:
                lam = sample_lambda(rng_lam, cfg.lambda_min, cfg.lambda_max)
            result.lambdas.append(lam)
            loss, ce, bpp = loss_variable(model, train.images[idx], train.labels[idx], lam, rng_noise)
            if not np.isfinite(loss.data):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} (lambda={lam:.6g}, lr={lr:.6g})")
            opt.zero_grad()
            loss.backward()
            if cfg.clip_norm > 0:
                clip_grad_norm(opt.params, cfg.clip_norm)
            opt.step(lr)
            result.steps += 1
            if initial_loss is None:
                initial_loss = loss.item()
            ce_sum += ce.item()
            rate_sum += bpp.item() if bpp is not None else 0.0
            loss_sum += loss.item()
            nb += 1
        mean_loss = loss_sum / max(nb, 1)
        bad_epochs = bad_epochs + 1 if mean_loss > 10 * initial_loss else 0
        if bad_epochs >= 3:
            raise TrainingDiverged(f"loss {mean_loss:.4g} above 10x initial {initial_loss:.4g} "
                                   f"for 3 epochs (epoch {epoch}, lr={lr:.6g})")
        if model.compression:
            model.update_tables()
        row = {"epoch": epoch, "lr": lr, "mean_ce": ce_sum / max(nb, 1),
               "mean_rate_bpp": rate_sum / max(nb, 1),
               "probe_top1": probe_accuracy(model, probe, probe_lam)}
        result.log.append(row)
        log.info("epoch %d lr %.5f ce %.4f rate %.4f bpp probe %.2f%%", epoch, lr, row["mean_ce"],
                 row["mean_rate_bpp"], row["probe_top1"])
        if out is not None:
            model.save(out / "checkpoint.fwt")
            (out / "train_log.csv").write_text(result.log_csv())
    if model.compression:
        model.update_tables()
    return result


def train_fixed(lam: float, cfg: TrainConfig, train: Dataset, test: Dataset | None = None,
                out_dir=None) -> TrainResult:
    kw = asdict(cfg)
    kw.update(mode="fixed_rate", fixed_lambda=lam)
    return fit(TrainConfig(**kw), train, test, out_dir)


def clip_grad_norm(params, max_norm: float) -> float:
    """Rescale gradients in place so their joint L2 norm is at most ``max_norm``."""
    norm = math.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in params if p.grad is not None))
    if norm > max_norm:
        scale = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return norm


def _no_decay(name: str) -> bool:
    return name.endswith("bias") or name.startswith("entropy.")
