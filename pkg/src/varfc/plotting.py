"""Figure styling and the two report figures."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

COLORS = ("#1b6ca8", "#d1495b", "#66a182", "#edae49", "#8d6a9f", "#2e4057", "#00798c")


def pretty_plot(width: float = 5.0, height: float | None = None):
    """Figure and axes with consistent fonts, thin spines and no top/right frame."""
    height = height or width * 0.68
    plt.rcParams.update({
        "font.size": 9,
        "axes.labelsize": 9,
        "axes.titlesize": 10,
        "legend.fontsize": 8,
        "xtick.labelsize": 8,
        "ytick.labelsize": 8,
        "axes.linewidth": 0.6,
        "svg.fonttype": "none",
        "svg.hashsalt": "varfc",
    })
    fig, ax = plt.subplots(figsize=(width, height))
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.grid(True, lw=0.3, alpha=0.5)
    return fig, ax


def _save(fig, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def plot_ra_curves(curves: dict, path) -> None:
    """Top-1 vs bpp, one line per Config.k."""
    fig, ax = pretty_plot()
    for i, (k, curve) in enumerate(sorted(curves.items())):
        ax.plot(curve.bpp, curve.top1, "o-", ms=3, lw=1.2, color=COLORS[i % len(COLORS)], label=f"Config.{k}")
    ax.set_xscale("log")
    ax.set_xlabel("bits per pixel")
    ax.set_ylabel("Top-1 accuracy (%)")
    ax.legend(frameon=False)
    _save(fig, path)


def plot_delta_latency(deltas: dict, timings: dict, path) -> None:
    """Delta-accuracy against encoding latency, one marker per Config.k."""
    fig, ax = pretty_plot()
    for i, k in enumerate(sorted(deltas)):
        if k not in timings:
            continue
        ax.plot(timings[k].encoding_ms, deltas[k], "s", ms=6, color=COLORS[i % len(COLORS)], label=f"Config.{k}")
        ax.annotate(f"Config.{k}", (timings[k].encoding_ms, deltas[k]), textcoords="offset points",
                    xytext=(5, 4), fontsize=7)
    ax.set_xlabel("encoding latency (ms)")
    ax.set_ylabel("Delta-accuracy (%)")
    _save(fig, path)
