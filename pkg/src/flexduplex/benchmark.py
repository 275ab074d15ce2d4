"""Method comparison on a common set of instances: mean rates, ratios to
the exhaustive optimum and per-sample wall time."""
from __future__ import annotations

import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import flexnet
from .channel import GainMatrix
from .solvers import (
    MAX_EXHAUSTIVE_PAIRS,
    TooManyPairs,
    exhaustive_search,
    heuristic_search,
    max_power_baseline,
    max_power_silent_baseline,
)

METHODS = ("flexnet", "exhaustive", "heuristic", "maxpower", "maxpower_silent")
POOLED = "all"


class UnknownMethod(ValueError):
    pass


@dataclass
class BenchmarkRow:
    method: str
    n_pairs: int | str  # POOLED for the all-sizes summary
    mean_rate: float
    ratio: float  # nan when exhaustive was not run
    mean_seconds: float
    sample_count: int
    seed: int

    FIELDS = ("method", "n_pairs", "mean_rate", "ratio", "mean_seconds", "sample_count", "seed")

    def as_dict(self):
        return asdict(self)


def check_methods(methods: Sequence[str], max_pairs: int | None = None):
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise UnknownMethod(f"unknown method(s) {unknown}; choose from {list(METHODS)}")
    if "exhaustive" in methods and max_pairs is not None and max_pairs > MAX_EXHAUSTIVE_PAIRS:
        raise TooManyPairs(f"exhaustive search refused for {max_pairs} pairs (limit {MAX_EXHAUSTIVE_PAIRS})")


def solve(method, G: GainMatrix, params=None, seed=0, epsilon=1e-3, graph=None):
    """Run one method on one instance; returns a SolverResult."""
    if method == "flexnet":
        if params is None:
            raise ValueError("flexnet needs model parameters")
        return flexnet.infer(G, params, graph)
    if method == "exhaustive":
        return exhaustive_search(G)
    if method == "heuristic":
        return heuristic_search(G, epsilon=epsilon, seed=seed)
    if method == "maxpower":
        return max_power_baseline(G)
    if method == "maxpower_silent":
        return max_power_silent_baseline(G)
    raise UnknownMethod(method)


def _run_instance(job):
    """Rates and times of every method on sample ``i`` (worker entry point)."""
    i, G, methods, params, seed, epsilon = job
    graph = flexnet.model_graph(G, params) if params is not None and "flexnet" in methods else None
    out = {}
    for m in methods:
        res = solve(m, G, params, seed=[seed, i], epsilon=epsilon, graph=graph)
        out[m] = (res.achieved_rate, res.wall_time)
    return out


def run_methods(samples: Sequence[GainMatrix], methods, params=None, seed=0, epsilon=1e-3, workers=1):
    """Per-sample ``{method: (rate, seconds)}`` in sample order.

    With ``workers > 1`` samples are spread over processes; results are
    collected in input order, so aggregates do not depend on scheduling.
    """
    methods = list(methods)
    check_methods(methods, max((G.n_pairs for G in samples), default=None))
    jobs = [(i, G, methods, params, seed, epsilon) for i, G in enumerate(samples)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_run_instance, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [_run_instance(job) for job in jobs]


def summarize(samples, per_sample, methods, seed=0) -> list[BenchmarkRow]:
    """One row per (method, size); plus pooled rows when sizes are mixed.

    The ratio is mean rate over mean exhaustive rate on the same instances.
    """
    groups = defaultdict(list)
    for i, G in enumerate(samples):
        groups[G.n_pairs].append(i)
    keys = sorted(groups)
    if len(keys) > 1:
        groups[POOLED] = list(range(len(samples)))
        keys.append(POOLED)
    rows = []
    for key in keys:
        idx = groups[key]
        ref = None
        if "exhaustive" in methods:
            ref = float(np.mean([per_sample[i]["exhaustive"][0] for i in idx]))
        for m in methods:
            rates = [per_sample[i][m][0] for i in idx]
            secs = [per_sample[i][m][1] for i in idx]
            mean_rate = float(np.mean(rates))
            ratio = mean_rate / ref if ref else math.nan
            rows.append(BenchmarkRow(m, key, mean_rate, ratio, float(np.mean(secs)), len(idx), seed))
    return rows


def evaluate(samples, methods=METHODS, params=None, seed=0, epsilon=1e-3, workers=1) -> list[BenchmarkRow]:
    per_sample = run_methods(samples, methods, params, seed, epsilon, workers)
    return summarize(samples, per_sample, list(methods), seed)


def time_flexnet(samples, params) -> float:
    """Mean seconds per sample of forward pass plus binarization; graphs are prebuilt."""
    graphs = [flexnet.model_graph(G, params) for G in samples]
    total = 0.0
    for G, graph in zip(samples, graphs):
        t0 = time.perf_counter()
        flexnet.infer(G, params, graph)
        total += time.perf_counter() - t0
    return total / len(samples)
