"""Node placement and pairing for synthetic flexible duplex networks."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InfeasiblePacking(ValueError):
    """Raised when the requested points cannot be placed at the minimum distance."""


class OddNodeCount(ValueError):
    pass


@dataclass(frozen=True)
class NetworkTopology:
    positions: np.ndarray  # (2N, 2), meters
    pairs: list[tuple[int, int]]
    area_side: float

    @property
    def n_nodes(self) -> int:
        return len(self.positions)

    @property
    def n_pairs(self) -> int:
        return len(self.pairs)

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.sqrt(np.sum(diff**2, axis=-1))


def sample_poisson_disk(area_side, min_distance, count, seed, max_rejections=10_000):
    """Dart-throwing Poisson disk sampler on the square [0, area_side]^2.

    Each point is accepted only if it keeps ``min_distance`` from every
    point placed so far. After ``max_rejections`` consecutive rejections
    for one point the packing is declared infeasible.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if min_distance <= 0 or area_side <= 0:
        raise ValueError("area_side and min_distance must be positive")
    # disks of radius min_distance/2 must fit (coarse necessary condition)
    if count > 1 and count * math.pi * (min_distance / 2) ** 2 >= (area_side + min_distance) ** 2:
        raise InfeasiblePacking(
            f"{count} points at {min_distance} m spacing do not fit in a {area_side} m square"
        )

    rng = np.random.default_rng(seed)
    points = np.empty((count, 2))
    min_sq = min_distance**2
    placed = 0
    while placed < count:
        for _ in range(max_rejections):
            cand = rng.uniform(0.0, area_side, size=2)
            if placed == 0 or np.min(np.sum((points[:placed] - cand) ** 2, axis=1)) >= min_sq:
                points[placed] = cand
                placed += 1
                break
        else:
            raise InfeasiblePacking(
                f"placed {placed}/{count} points before exhausting {max_rejections} attempts"
            )
    return points


def pair_nodes(count, seed):
    """Uniform random perfect matching on node indices ``0..count-1``.

    Pairs are returned in original indices. ``relabel_order`` turns the
    matching into the adjacent-index layout where pair k is ``(2k, 2k+1)``.
    """
    if count < 2 or count % 2:
        raise OddNodeCount(f"need an even node count >= 2, got {count}")
    rng = np.random.default_rng(seed)
    # a uniform permutation read off in consecutive twos is a uniform matching
    perm = rng.permutation(count)
    return [tuple(sorted((int(perm[2 * k]), int(perm[2 * k + 1])))) for k in range(count // 2)]


def relabel_order(pairs):
    """Original node index for each relabeled position."""
    return np.array([i for pair in pairs for i in pair], dtype=np.int64)


def random_topology(n_pairs, area_side=4000.0, min_distance=100.0, seed=0) -> NetworkTopology:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    place_seed, pair_seed = ss.spawn(2)
    pts = sample_poisson_disk(area_side, min_distance, 2 * n_pairs, place_seed)
    order = relabel_order(pair_nodes(2 * n_pairs, pair_seed))
    pairs = [(2 * k, 2 * k + 1) for k in range(n_pairs)]
    return NetworkTopology(positions=pts[order], pairs=pairs, area_side=float(area_side))
