"""Rate-accuracy sweeps, Delta-accuracy and latency measurement."""
from __future__ import annotations

import csv
import io
import logging
import statistics
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import tensor as T
from .autoencoder import LAMBDA_MAX, LAMBDA_MIN
from .data import Dataset
from .entropy import quantize
from .model import VariableRateModel, f32
from .tensor import Tensor

log = logging.getLogger(__name__)

SWEEP_COLUMNS = ("config_k", "lambda", "bpp", "est_bpp", "top1", "clamp_rate")
REPORT_COLUMNS = ("config_k", "lambda", "bpp", "top1", "classifier_ms", "compression_ms", "encoding_ms")
CLAMP_WARN_RATE = 0.01


class DisjointRates(ValueError):
    pass


@dataclass
class TimingRecord:
    classifier_ms: float
    compression_ms: float
    encoding_ms: float


@dataclass
class RACPoint:
    lam: float
    bpp: float
    top1: float
    config_k: int
    est_bpp: float = float("nan")
    clamp_rate: float = 0.0
    timing: TimingRecord | None = None


@dataclass
class RACurve:
    points: list
    model_id: str = ""

    @classmethod
    def from_points(cls, points, model_id: str = "") -> "RACurve":
        """Sort by bpp; points sharing a bpp value collapse to the most accurate one."""
        best: dict[float, RACPoint] = {}
        for p in points:
            if p.bpp not in best or p.top1 > best[p.bpp].top1:
                best[p.bpp] = p
        return cls([best[b] for b in sorted(best)], model_id)

    @property
    def bpp(self) -> np.ndarray:
        return np.array([p.bpp for p in self.points])

    @property
    def top1(self) -> np.ndarray:
        return np.array([p.top1 for p in self.points])

    def __len__(self):
        return len(self.points)


@dataclass
class SweepResult:
    curve: RACurve
    points: list  # one per lambda, grid order
    warnings: list = field(default_factory=list)

    def csv(self) -> str:
        return sweep_csv(self.points)


def default_lambda_grid(n: int = 12, lo: float = LAMBDA_MIN, hi: float = LAMBDA_MAX) -> np.ndarray:
    return np.geomspace(lo, hi, n)


def sweep(model: VariableRateModel, ds: Dataset, lambdas, batch: int = 200,
          model_id: str = "") -> SweepResult:
    """Full coding round trip per lambda: quantise, rANS-pack, unpack, decode, classify.

    bpp counts every byte of every VFCB stream (header included).
    """
    lo, hi = model.lambda_range
    feats = [model.edge_features(ds.images[i:i + batch]) for i in range(0, len(ds), batch)]
    n = len(ds)
    points, warnings = [], []
    for lam in lambdas:
        lam = float(lam)
        if not lo * (1 - 1e-6) <= lam <= hi * (1 + 1e-6):
            raise ValueError(f"lambda {lam} outside the trained range [{lo}, {hi}]")
        coded_bits = est_bits = 0.0
        correct = clamped = total = 0
        for bi, feat in enumerate(feats):
            with T.no_grad():
                e = model.autoencoder.embed_lambda(f32(lam))
                z = model.autoencoder.encode(Tensor(feat), e).data
            sym, c = quantize(z, model.grid)
            clamped += c
            total += sym.size
            streams = [model.pack(s, lam) for s in sym]
            coded_bits += 8.0 * sum(len(b) for b in streams)
            decoded = [model.unpack(b) for b in streams]
            rx = np.stack([d[0] for d in decoded])
            lam_rx = decoded[0][1]
            logits = model.decode_symbols(rx, lam_rx)
            labels = ds.labels[bi * batch: bi * batch + len(sym)]
            correct += int((logits.argmax(1) == labels).sum())
            est_bits += float(model.estimated_bits(sym).sum())
        rate = clamped / max(total, 1)
        if rate > CLAMP_WARN_RATE:
            msg = f"lambda={lam:.4g}: {100 * rate:.2f}% of symbols clamped; model may be untrained"
            log.warning(msg)
            warnings.append(msg)
        points.append(RACPoint(lam, coded_bits / (n * model.pixels), 100.0 * correct / n, model.config_k,
                               est_bits / (n * model.pixels), rate))
    return SweepResult(RACurve.from_points(points, model_id), points, warnings)


def sweep_csv(points) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for p in points:
        w.writerow([p.config_k, repr(p.lam), repr(p.bpp), repr(p.est_bpp), repr(p.top1), repr(p.clamp_rate)])
    return buf.getvalue()


def read_sweep_csv(text: str) -> list[RACPoint]:
    rows = csv.DictReader(io.StringIO(text))
    return [RACPoint(float(r["lambda"]), float(r["bpp"]), float(r["top1"]), int(r["config_k"]),
                     float(r.get("est_bpp", "nan")), float(r.get("clamp_rate", 0.0))) for r in rows]


def delta_accuracy(curve_a: RACurve, curve_b: RACurve, n: int | None = None) -> float:
    """Mean accuracy gap A - B over the shared log10-bpp interval.

    Both curves are interpolated with monotone piecewise cubics in
    (log10 bpp, accuracy). By default each cubic is integrated exactly; pass
    ``n`` to use an ``n``-point trapezoid rule instead. Either way the two
    integrals are formed separately and subtracted, so delta(A, B) == -delta(B, A)
    exactly.
    """
    for c in (curve_a, curve_b):
        if len(c) < 2:
            raise ValueError("each curve needs at least 2 points")
    xa, xb = np.log10(curve_a.bpp), np.log10(curve_b.bpp)
    lo, hi = max(xa[0], xb[0]), min(xa[-1], xb[-1])
    if not lo < hi:
        raise DisjointRates("disjoint rate ranges")
    fa = PchipInterpolator(xa, curve_a.top1)
    fb = PchipInterpolator(xb, curve_b.top1)
    if n is None:
        ia, ib = float(fa.integrate(lo, hi)), float(fb.integrate(lo, hi))
    else:
        x = np.linspace(lo, hi, n)
        ia, ib = float(np.trapezoid(fa(x), x)), float(np.trapezoid(fb(x), x))
    return (ia - ib) / (hi - lo)


# -- latency ----------------------------------------------------------------
def _ms(t0: float, t1: float) -> float:
    return (t1 - t0) * 1e3


def time_edge(model: VariableRateModel, image: np.ndarray, lam: float):
    """One timed edge pass. Returns (bitstream, classifier_ms, compression_ms, encoding_ms)."""
    t0 = time.perf_counter()
    feat = model.edge_features(image[None])
    t1 = time.perf_counter()
    with T.no_grad():
        e = model.autoencoder.embed_lambda(f32(lam))
        z = model.autoencoder.encode(Tensor(feat), e).data
    t2 = time.perf_counter()
    sym, _ = quantize(z[0], model.grid)
    stream = model.pack(sym, lam)
    t3 = time.perf_counter()
    return stream, _ms(t0, t1), _ms(t2, t3), _ms(t0, t3)


def measure_latency(model: VariableRateModel, image: np.ndarray | None = None, lam: float = 0.01,
                    n_warmup: int = 10, n_runs: int = 100) -> TimingRecord:
    """Median single-image edge timings after ``n_warmup`` untimed passes."""
    if image is None:
        image = np.zeros(model.spec.input_shape, np.float32)
    model.require_tables()
    for _ in range(n_warmup):
        time_edge(model, image, lam)
    runs = [time_edge(model, image, lam)[1:] for _ in range(n_runs)]
    cls_ms, comp_ms, enc_ms = zip(*runs)
    return TimingRecord(statistics.median(cls_ms), statistics.median(comp_ms), statistics.median(enc_ms))


def bench_csv(timings: dict[int, TimingRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("config_k", "classifier_ms", "compression_ms", "encoding_ms"))
    for k in sorted(timings):
        t = timings[k]
        w.writerow([k, f"{t.classifier_ms:.4f}", f"{t.compression_ms:.4f}", f"{t.encoding_ms:.4f}"])
    return buf.getvalue()


def read_bench_csv(text: str) -> dict[int, TimingRecord]:
    return {int(r["config_k"]): TimingRecord(float(r["classifier_ms"]), float(r["compression_ms"]),
                                             float(r["encoding_ms"]))
            for r in csv.DictReader(io.StringIO(text))}


# -- reports ------------------------------------------------------------------
def report_csv(curves: dict[int, RACurve], timings: dict[int, TimingRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for k in sorted(curves):
        t = timings.get(k)
        tcols = [f"{t.classifier_ms:.4f}", f"{t.compression_ms:.4f}", f"{t.encoding_ms:.4f}"] if t else ["", "", ""]
        for p in curves[k].points:
            w.writerow([k, repr(p.lam), repr(p.bpp), repr(p.top1)] + tcols)
    return buf.getvalue()


def summary_table(curves: dict[int, RACurve], timings: dict[int, TimingRecord],
                  baseline: int | None = None) -> tuple[str, dict[int, float]]:
    """Rows Delta-Acc / Classifier / Compression / Encoding, one column per config."""
    ks = sorted(set(curves) | set(timings))
    base = baseline if baseline is not None else min(curves)
    deltas = {}
    for k in ks:
        if k in curves:
            try:
                deltas[k] = 0.0 if k == base else delta_accuracy(curves[k], curves[base])
            except (DisjointRates, ValueError):
                deltas[k] = float("nan")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["Configuration"] + [f"Config.{k}" for k in ks])
    w.writerow(["Delta-Acc. (%)"] + [f"{deltas[k]:.2f}" if k in deltas else "" for k in ks])
    for label, attr in (("Classifier Latency (ms)", "classifier_ms"), ("Compression Time (ms)", "compression_ms"),
                        ("Encoding Latency (ms)", "encoding_ms")):
        w.writerow([label] + [f"{getattr(timings[k], attr):.2f}" if k in timings else "" for k in ks])
    return buf.getvalue(), deltas


def report(curves: dict[int, RACurve], timings: dict[int, TimingRecord], out_dir) -> dict:
    """Write report.csv, summary.csv, ra_curves.svg and delta_latency.svg into ``out_dir``."""
    from pathlib import Path

    from .plotting import plot_delta_latency, plot_ra_curves

    if not curves:
        raise ValueError("report needs at least one curve")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {name: out / name for name in ("report.csv", "summary.csv", "ra_curves.svg", "delta_latency.svg")}
    paths["report.csv"].write_text(report_csv(curves, timings))
    table, deltas = summary_table(curves, timings)
    paths["summary.csv"].write_text(table)
    plot_ra_curves(curves, paths["ra_curves.svg"])
    plot_delta_latency(deltas, timings, paths["delta_latency.svg"])
    return paths
