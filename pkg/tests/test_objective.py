import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import gain, random_gains
from flexduplex.objective import (
    Allocation,
    IndexOutOfRange,
    InvalidAllocation,
    directions_from_pair_bits,
    partner,
    relaxed_sum_rate,
    sinr,
    sum_rate,
)


def scalar_rate(g, noise, p, d):
    """Loop transcription of the flexible duplex sum-rate (1-based formula for m)."""
    n_nodes = len(p)
    total = 0.0
    for n1 in range(1, n_nodes + 1):
        m1 = 2 * (n1 % 2) + n1 - 1
        n, m = n1 - 1, m1 - 1
        interf = 0.0
        for k in range(n_nodes):
            if k not in (m, n):
                interf += p[k] * d[k] * g[n][k]
        total += math.log2(1 + p[m] * d[m] * g[n][m] / (noise + interf))
    return total


def test_partner_map():
    assert partner(0) == 1 and partner(1) == 0
    # 1-based n=3 pairs with m = 2*(3 mod 2) + 3 - 1 = 4
    assert partner(2) == 3
    assert all(partner(partner(n)) == n for n in range(20))
    with pytest.raises(IndexOutOfRange):
        partner(4, 4)


def test_sinr_single_link(two_node):
    alloc = Allocation([0.0, 1.0], [0, 1])
    assert sinr(two_node, alloc, 0) == pytest.approx(3.0)
    assert sinr(two_node, alloc, 1) == 0.0
    assert sum_rate(two_node, alloc) == pytest.approx(2.0)


def four_node():
    g = np.zeros((4, 4))
    g[0, 1] = g[0, 3] = 1.0
    g[2, 3] = g[2, 1] = 1.0
    return gain(g)


def test_sinr_with_interference():
    G = four_node()
    alloc = Allocation(np.ones(4), [0, 1, 0, 1])
    assert sinr(G, alloc, 0) == pytest.approx(0.5)
    assert sum_rate(G, alloc) == pytest.approx(2 * math.log2(1.5))
    assert sum_rate(G, alloc) == pytest.approx(1.1699, abs=1e-4)


def test_silent_partner_gives_zero(two_node):
    alloc = Allocation([1.0, 0.0], [0, 1])
    assert sinr(two_node, alloc, 0) == 0.0


def test_all_zero_gains():
    G = gain(np.zeros((4, 4)))
    assert sum_rate(G, Allocation(np.ones(4), [1, 0, 0, 1])) == 0.0


def test_relaxed_half_directions():
    G = gain([[0, 3], [3, 0]])
    value = relaxed_sum_rate(G, [1.0, 1.0], [0.5, 0.5])
    assert value == pytest.approx(scalar_rate(G.g, 1.0, [1, 1], [0.5, 0.5]), abs=1e-12)
    assert value == pytest.approx(2.6439, abs=1e-4)


@given(seed=st.integers(0, 10_000), n_pairs=st.integers(1, 5))
@settings(max_examples=60, deadline=None)
def test_matches_scalar_oracle(seed, n_pairs):
    rng = np.random.default_rng(seed)
    G = random_gains(rng, n_pairs)
    p = rng.uniform(0, 1, 2 * n_pairs)
    d = directions_from_pair_bits(rng.uniform(0, 1, n_pairs))
    assert relaxed_sum_rate(G, p, d) == pytest.approx(scalar_rate(G.g, 1.0, p, d), rel=1e-12)
    bits = directions_from_pair_bits(rng.integers(0, 2, n_pairs))
    assert relaxed_sum_rate(G, p, bits) == sum_rate(G, Allocation(p, bits))


@given(seed=st.integers(0, 10_000))
@settings(max_examples=40, deadline=None)
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    G = random_gains(rng, 4)
    p = rng.uniform(0, 1, 8)
    d = directions_from_pair_bits(rng.integers(0, 2, 4))
    perm = rng.permutation(4)
    idx = np.array([2 * k + s for k in perm for s in (0, 1)])
    assert sum_rate(G.permuted(perm), Allocation(p[idx], d[idx])) == pytest.approx(sum_rate(G, Allocation(p, d)), rel=1e-12)


@given(seed=st.integers(0, 10_000), bump=st.floats(0.0, 10.0))
@settings(max_examples=40, deadline=None)
def test_monotone_in_desired_gain(seed, bump):
    rng = np.random.default_rng(seed)
    G = random_gains(rng, 3)
    p = rng.uniform(0, 1, 6)
    d = directions_from_pair_bits(rng.uniform(0, 1, 3))
    before = relaxed_sum_rate(G, p, d)
    g = G.g.copy()
    g[2, 3] += bump
    assert relaxed_sum_rate(gain(g), p, d) >= before - 1e-12


def test_rate_non_negative_and_silent_row():
    rng = np.random.default_rng(0)
    G = random_gains(rng, 3)
    g = G.g.copy()
    g[2, :] = g[:, 2] = g[3, :] = g[:, 3] = 0.0
    alloc = Allocation(np.ones(6), [1, 0, 1, 0, 0, 1])
    G2 = gain(g)
    assert sinr(G2, alloc, 3) == 0.0
    assert sum_rate(G2, alloc) >= 0


def test_allocation_validation():
    Allocation([0.5, 1.0], [1, 0]).validate(1.0)
    Allocation([0.5, 1.0], [0.3, 0.7], relaxed=True).validate(1.0)
    with pytest.raises(InvalidAllocation):
        Allocation([1.5, 0.0], [1, 0]).validate(1.0)
    with pytest.raises(InvalidAllocation):
        Allocation([1.0, 0.0], [1, 1]).validate(1.0)
    with pytest.raises(InvalidAllocation):
        Allocation([1.0, 0.0], [0.5, 0.5]).validate(1.0)
