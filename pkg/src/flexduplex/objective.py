"""SINR and sum-rate of a flexible duplex allocation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .channel import GainMatrix


class IndexOutOfRange(IndexError):
    pass


class InvalidAllocation(ValueError):
    pass


def partner(n, n_nodes=None):
    """Index of the other node in ``n``'s pair (0-based adjacent-pair layout)."""
    if n < 0 or (n_nodes is not None and n >= n_nodes):
        raise IndexOutOfRange(f"node {n} outside 0..{n_nodes}")
    return n ^ 1


def partners(n_nodes) -> np.ndarray:
    return np.arange(n_nodes) ^ 1


@dataclass
class Allocation:
    p: np.ndarray
    d: np.ndarray
    relaxed: bool = False

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        self.d = np.asarray(self.d, dtype=np.float64)

    def validate(self, p_max, atol=1e-12):
        n = len(self.p)
        if self.d.shape != (n,) or n % 2:
            raise InvalidAllocation("p and d must be equal-length vectors over 2N nodes")
        if np.any(self.p < -atol) or np.any(self.p > p_max * (1 + atol)):
            raise InvalidAllocation("powers outside [0, p_max]")
        if np.any(np.abs(self.d[0::2] + self.d[1::2] - 1.0) > atol):
            raise InvalidAllocation("pair directions must satisfy d_partner = 1 - d")
        if self.relaxed:
            if np.any(self.d < 0) or np.any(self.d > 1):
                raise InvalidAllocation("relaxed directions outside [0, 1]")
        elif not np.all((self.d == 0) | (self.d == 1)):
            raise InvalidAllocation("binary directions must be 0 or 1")
        return self


def directions_from_pair_bits(bits) -> np.ndarray:
    """Per-node directions from one value per pair (1 means the even node transmits)."""
    bits = np.asarray(bits, dtype=np.float64)
    d = np.empty(2 * len(bits))
    d[0::2] = bits
    d[1::2] = 1.0 - bits
    return d


def _interference_gains(g):
    n = g.shape[0]
    gi = g.copy()
    idx = np.arange(n)
    gi[idx, idx] = 0.0
    gi[idx, idx ^ 1] = 0.0
    return gi


def sinr_all(G: GainMatrix, p, d) -> np.ndarray:
    """SINR of every node; d may be binary or relaxed."""
    tx = np.asarray(p, dtype=np.float64) * np.asarray(d, dtype=np.float64)
    n = G.n_nodes
    idx = np.arange(n)
    signal = G.g[idx, idx ^ 1] * tx[idx ^ 1]
    interference = _interference_gains(G.g) @ tx
    return signal / (G.noise + interference)


def sinr(G: GainMatrix, alloc: Allocation, n) -> float:
    partner(n, G.n_nodes)
    return float(sinr_all(G, alloc.p, alloc.d)[n])


def node_rates(G: GainMatrix, p, d) -> np.ndarray:
    return np.log2(1.0 + sinr_all(G, p, d))


def sum_rate(G: GainMatrix, alloc: Allocation) -> float:
    return float(np.sum(node_rates(G, alloc.p, alloc.d)))


def relaxed_sum_rate(G: GainMatrix, p, d) -> float:
    """Sum-rate with continuous directions in [0, 1]."""
    return float(np.sum(node_rates(G, p, d)))
