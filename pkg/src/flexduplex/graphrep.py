"""Dual-edge graph of a flexible duplex network.

Vertices are nodes; undirected desired edges join the two nodes of a pair;
directed interference edges run from every node to every node outside its
pair. Interference edges are stored sorted by destination so pooling can
work on contiguous segments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .channel import GainMatrix


def normalize_gain(g, p_max, noise):
    """SNR-like feature ``log10(1 + g * p_max / noise)``."""
    return np.log10(1.0 + np.asarray(g) * p_max / noise)


@dataclass
class FlexGraph:
    n_vertices: int
    vertex_feature: np.ndarray  # (V,)
    intf_src: np.ndarray  # (E,)
    intf_dst: np.ndarray  # (E,), non-decreasing
    intf_feature: np.ndarray  # (E,)
    # raw quantities for the rate computation, gains divided by receiver noise
    desired_snr_gain: np.ndarray  # (V,): g[v, partner(v)] / noise[v]
    intf_snr_gain: np.ndarray  # (E,): g[dst, src] / noise[dst]
    p_max: np.ndarray  # (V,)
    norm_constant: tuple[float, float]  # (p_max, noise) used by the feature transform
    node_graph: np.ndarray  # (V,) index of the source sample, all zero for one graph
    n_graphs: int = 1

    @property
    def desired_edges(self) -> list[tuple[int, int]]:
        return [(v, v + 1) for v in range(0, self.n_vertices, 2)]

    @property
    def partner(self) -> np.ndarray:
        return np.arange(self.n_vertices) ^ 1


def interference_edges(n_nodes):
    """All ordered (src, dst) with src outside dst's pair, sorted by dst then src."""
    dst, src = np.divmod(np.arange(n_nodes * n_nodes), n_nodes)
    keep = (src != dst) & (src != (dst ^ 1))
    return src[keep], dst[keep]


def build_graph(G: GainMatrix, p_max=None, noise=None) -> FlexGraph:
    """Graph with normalized features. ``p_max``/``noise`` default to G's own
    (first-node noise) and fix the feature scale."""
    p_max = G.p_max if p_max is None else p_max
    noise = float(G.noise[0]) if noise is None else noise
    n = G.n_nodes
    idx = np.arange(n)
    desired = G.g[idx, idx ^ 1]
    src, dst = interference_edges(n)
    intf = G.g[dst, src]
    return FlexGraph(
        n_vertices=n,
        vertex_feature=normalize_gain(desired, p_max, noise),
        intf_src=src,
        intf_dst=dst,
        intf_feature=normalize_gain(intf, p_max, noise),
        desired_snr_gain=desired / G.noise,
        intf_snr_gain=intf / G.noise[dst],
        p_max=np.full(n, float(G.p_max)),
        norm_constant=(float(p_max), float(noise)),
        node_graph=np.zeros(n, dtype=np.int64),
    )


def batch_graphs(graphs: Sequence[FlexGraph]) -> FlexGraph:
    """Disjoint union; node indices are offset so pairs stay adjacent."""
    if len(graphs) == 1:
        return graphs[0]
    offsets = np.cumsum([0] + [g.n_vertices for g in graphs[:-1]])
    cat = np.concatenate
    return FlexGraph(
        n_vertices=int(sum(g.n_vertices for g in graphs)),
        vertex_feature=cat([g.vertex_feature for g in graphs]),
        intf_src=cat([g.intf_src + o for g, o in zip(graphs, offsets)]),
        intf_dst=cat([g.intf_dst + o for g, o in zip(graphs, offsets)]),
        intf_feature=cat([g.intf_feature for g in graphs]),
        desired_snr_gain=cat([g.desired_snr_gain for g in graphs]),
        intf_snr_gain=cat([g.intf_snr_gain for g in graphs]),
        p_max=cat([g.p_max for g in graphs]),
        norm_constant=graphs[0].norm_constant,
        node_graph=cat([np.full(g.n_vertices, i) for i, g in enumerate(graphs)]),
        n_graphs=len(graphs),
    )
