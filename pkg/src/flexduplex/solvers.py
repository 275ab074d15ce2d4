"""Classical solvers for joint power and direction allocation.

All direction-dependent power control goes through :func:`power_control`,
a deterministic function of the direction vector, so the exhaustive search
dominates every method that picks a direction vector and then runs it.
"""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass

import numpy as np

from .channel import GainMatrix
from .objective import Allocation, _interference_gains, directions_from_pair_bits, sum_rate

MAX_EXHAUSTIVE_PAIRS = 16


class TooManyPairs(ValueError):
    pass


@dataclass
class SolverResult:
    alloc: Allocation
    achieved_rate: float
    iterations: int = 0
    restarts: int = 0
    wall_time: float = 0.0
    method: str = ""


def _result(G, p, d, method, t0, iterations=0, restarts=0) -> SolverResult:
    alloc = Allocation(p, d)
    return SolverResult(alloc, sum_rate(G, alloc), iterations, restarts, time.perf_counter() - t0, method)


def wmmse(G: GainMatrix, d, p_init=None, max_iters=100, tol=1e-6, history=None):
    """WMMSE power control for a fixed binary direction vector.

    Scalar real channels: amplitudes are ``sqrt(g)``. Receive nodes get zero
    power. If ``history`` is a list, the fixed-duplex sum-rate before the
    first and after every iteration is appended to it.
    """
    d = np.asarray(d, dtype=np.float64)
    n = G.n_nodes
    tx = np.flatnonzero(d == 1)
    rx = tx ^ 1
    p_init = np.full(n, G.p_max) if p_init is None else np.asarray(p_init, dtype=np.float64)
    v = np.sqrt(np.clip(p_init[tx], 0.0, G.p_max))
    vmax = np.sqrt(G.p_max)

    # A[i, j]: gain from transmitter j at the receiver served by transmitter i
    A = G.g[np.ix_(rx, tx)]
    amp = np.sqrt(np.diag(A))
    noise = G.noise[rx]
    interf = A - np.diag(np.diag(A))

    def rate(v):
        s = v * v
        return float(np.sum(np.log2(1.0 + amp * amp * s / (noise + interf @ s))))

    current = rate(v)
    if history is not None:
        history.append(current)
    best_rate, best_v = current, v
    for _ in range(max_iters):
        s = v * v
        total = noise + A @ s
        u = amp * v / total
        # 1 / (1 - u * amp * v) == 1 + SINR, computed without cancellation
        w = total / (total - amp * amp * s)
        denom = A.T @ (w * u * u)
        num = w * u * amp
        safe = denom > 0
        v = np.where(safe, np.clip(num / np.where(safe, denom, 1.0), 0.0, vmax), v)
        new = rate(v)
        if history is not None:
            history.append(new)
        improved = new - current
        current = new
        if new > best_rate:
            best_rate, best_v = new, v
        if improved < tol:
            break

    p = np.zeros(n)
    p[tx] = best_v * best_v
    return p


def silent_mask(G: GainMatrix, d, ratio=2.0):
    """Transmitters heard by another active receiver at least ``ratio`` times
    as strongly as by their own receiver."""
    d = np.asarray(d, dtype=np.float64)
    mask = np.zeros(G.n_nodes, dtype=bool)
    tx = np.flatnonzero(d == 1)
    rx = tx ^ 1
    cross = G.g[np.ix_(rx, tx)]  # cross[i, j]: gain from tx j at receiver rx[i]
    desired = np.diag(cross).copy()
    np.fill_diagonal(cross, -np.inf)
    mask[tx] = np.any(cross >= ratio * desired[None, :], axis=0)
    return mask


def power_control(G: GainMatrix, d, max_iters=100, tol=1e-6):
    """Best of two WMMSE runs: from full power, and from full power with the
    silent-node transmitters switched off (zero power is a fixed point)."""
    d = np.asarray(d, dtype=np.float64)
    full = d * G.p_max
    best_p = wmmse(G, d, full, max_iters, tol)
    mask = silent_mask(G, d)
    if mask.any():
        start = np.where(mask, 0.0, full)
        p = wmmse(G, d, start, max_iters, tol)
        if sum_rate(G, Allocation(p, d)) > sum_rate(G, Allocation(best_p, d)):
            best_p = p
    return best_p


def _batch_rates(G: GainMatrix, P, D):
    """Sum-rates for a batch of (power, direction) rows."""
    TX = P * D
    n = G.n_nodes
    idx = np.arange(n)
    signal = TX[:, idx ^ 1] * G.g[idx, idx ^ 1]
    interference = TX @ _interference_gains(G.g).T
    return np.sum(np.log2(1.0 + signal / (G.noise + interference)), axis=1)


def direct_search_directions(G: GainMatrix, p, d_init):
    """Greedy best-improvement single-pair flips until no flip helps at fixed ``p``."""
    p = np.asarray(p, dtype=np.float64)
    d = np.asarray(d_init, dtype=np.float64).copy()
    n_pairs = G.n_pairs
    current = _batch_rates(G, p[None, :], d[None, :])[0]
    flips = np.zeros((n_pairs, G.n_nodes), dtype=bool)
    for k in range(n_pairs):
        flips[k, 2 * k : 2 * k + 2] = True
    while True:
        cand = np.where(flips, 1.0 - d, d)
        rates = _batch_rates(G, np.broadcast_to(p, cand.shape), cand)
        best = int(np.argmax(rates))
        if rates[best] <= current:
            return d
        d = cand[best].copy()
        current = rates[best]


def _spread_pair_power(p):
    """Give both nodes of a pair the pair's transmit power."""
    pair = np.maximum(p[0::2], p[1::2])
    return np.repeat(pair, 2)


def heuristic_search(G: GainMatrix, epsilon=1e-3, n_restarts=None, seed=0, max_rounds=100, wmmse_iters=100, wmmse_tol=1e-6):
    """Coordinate descent: direct search over directions, then WMMSE over powers.

    Each restart begins from random directions and full power. A restart
    ends when a round improves the sum-rate by less than ``epsilon``.
    """
    t0 = time.perf_counter()
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    n_restarts = G.n_pairs if n_restarts is None else n_restarts
    if n_restarts < 1:
        raise ValueError("n_restarts must be >= 1")
    rng = np.random.default_rng(seed)
    best = (-np.inf, None, None)
    rounds = 0
    for _ in range(n_restarts):
        d = directions_from_pair_bits(rng.integers(0, 2, size=G.n_pairs))
        p = np.full(G.n_nodes, G.p_max)
        prev = -np.inf
        for _ in range(max_rounds):
            rounds += 1
            d = direct_search_directions(G, p, d)
            p_round = power_control(G, d, wmmse_iters, wmmse_tol)
            rate = sum_rate(G, Allocation(p_round, d))
            if rate > best[0]:
                best = (rate, p_round, d)
            p = _spread_pair_power(p_round)
            if rate - prev < epsilon:
                break
            prev = rate
    _, p, d = best
    return _result(G, p, d, "heuristic", t0, iterations=rounds, restarts=n_restarts)


def exhaustive_search(G: GainMatrix, wmmse_iters=100, wmmse_tol=1e-6):
    """WMMSE on every direction vector; ties go to the lexicographically first."""
    t0 = time.perf_counter()
    if G.n_pairs > MAX_EXHAUSTIVE_PAIRS:
        raise TooManyPairs(f"{G.n_pairs} pairs exceeds exhaustive limit of {MAX_EXHAUSTIVE_PAIRS}")
    best = (-np.inf, None, None)
    count = 0
    for bits in itertools.product((0, 1), repeat=G.n_pairs):
        d = directions_from_pair_bits(bits)
        p = power_control(G, d, wmmse_iters, wmmse_tol)
        rate = sum_rate(G, Allocation(p, d))
        count += 1
        if rate > best[0]:
            best = (rate, p, d)
    _, p, d = best
    return _result(G, p, d, "exhaustive", t0, iterations=count)


def max_power_directions(G: GainMatrix):
    """Per pair, the node whose outgoing desired gain is larger transmits (ties: lower index)."""
    a = np.arange(0, G.n_nodes, 2)
    b = a + 1
    # a transmits when the gain a -> b is at least the gain b -> a
    return directions_from_pair_bits((G.g[b, a] >= G.g[a, b]).astype(float))


def max_power_baseline(G: GainMatrix):
    t0 = time.perf_counter()
    d = max_power_directions(G)
    p = d * G.p_max
    return _result(G, p, d, "maxpower", t0)


def max_power_silent_baseline(G: GainMatrix, ratio=2.0):
    """Max power, with a transmitter switched off when some other active
    receiver hears it at least ``ratio`` times as strongly as its own receiver."""
    t0 = time.perf_counter()
    d = max_power_directions(G)
    p = d * G.p_max
    p[silent_mask(G, d, ratio)] = 0.0
    return _result(G, p, d, "maxpower_silent", t0)
