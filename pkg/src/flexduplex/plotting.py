"""Optional figures rendered from the same rows the CLI writes to CSV.

Everything here draws with the non-interactive Agg backend and saves to a
file; nothing is shown on screen.
"""
from __future__ import annotations

import math
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "figure.figsize": (5.0, 3.4),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 9,
}

LABELS = {
    "flexnet": "Flex-Net",
    "exhaustive": "Exhaustive",
    "heuristic": "Heuristic",
    "maxpower": "Max power",
    "maxpower_silent": "Max power, silent nodes",
}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def loss_history(history, path):
    """Mean training loss per epoch."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(range(1, len(history) + 1), history, marker=".", lw=1)
        ax.set_xlabel("epoch")
        ax.set_ylabel("mean loss (negative sum-rate)")
        return _save(fig, path)


def rate_ratios(rows, path):
    """Bars of rate ratio to exhaustive, grouped by network size."""
    by_size = defaultdict(dict)
    for r in rows:
        by_size[str(r.n_pairs)][r.method] = r.ratio
    sizes = list(by_size)
    methods = [m for m in LABELS if any(m in v for v in by_size.values())]
    width = 0.8 / max(len(methods), 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for k, m in enumerate(methods):
            xs = [i + (k - (len(methods) - 1) / 2) * width for i in range(len(sizes))]
            ys = [by_size[s].get(m, math.nan) for s in sizes]
            ax.bar(xs, ys, width, label=LABELS[m])
        ax.set_xticks(range(len(sizes)), sizes)
        ax.set_xlabel("pairs")
        ax.set_ylabel("rate / exhaustive rate")
        ax.set_ylim(0, 1.05)
        ax.legend(fontsize=7, loc="lower right")
        return _save(fig, path)


def run_times(rows, path):
    """Per-sample wall time against network size, log scale."""
    series = defaultdict(list)
    for method, n_pairs, seconds in rows:
        series[method].append((n_pairs, seconds))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for method, pts in series.items():
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=LABELS.get(method, method))
        ax.set_yscale("log")
        ax.set_xlabel("pairs")
        ax.set_ylabel("seconds per sample")
        ax.legend()
        return _save(fig, path)


def generalization(rows, path):
    """Rate ratio of the mixed-size model next to the per-size models."""
    series = defaultdict(list)
    for r in rows:
        series[r["model_kind"]].append((r["n_pairs"], r["ratio"]))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for kind, pts in series.items():
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=f"{kind} model")
        ax.set_xlabel("pairs")
        ax.set_ylabel("rate / exhaustive rate")
        ax.legend()
        return _save(fig, path)
