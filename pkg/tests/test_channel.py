import math

import numpy as np
import pytest

from flexduplex.channel import (
    SPEED_OF_LIGHT,
    ChannelConfig,
    CorruptHeader,
    Dataset,
    GainMatrix,
    NonPositiveInput,
    TruncatedPayload,
    UnsupportedVersion,
    generate_dataset,
    large_scale_gain,
    load_dataset,
    path_loss_db,
    sample_rayleigh,
    save_dataset,
)
from flexduplex.topology import NetworkTopology


def fspl_oracle(d, f):
    # direct form of the Friis free-space loss
    return 10 * math.log10((4 * math.pi * d * f / SPEED_OF_LIGHT) ** 2)


@pytest.mark.parametrize("d, expected", [(1.0, 46.43), (1000.0, 106.43)])
def test_path_loss_values(d, expected):
    assert path_loss_db(d, 5e9) == pytest.approx(fspl_oracle(d, 5e9), abs=1e-9)
    assert path_loss_db(d, 5e9) == pytest.approx(expected, abs=0.005)


def test_path_loss_doubling():
    assert path_loss_db(200.0, 5e9) - path_loss_db(100.0, 5e9) == pytest.approx(20 * math.log10(2))


@pytest.mark.parametrize("d, f", [(0.0, 5e9), (-1.0, 5e9), (10.0, 0.0)])
def test_path_loss_rejects_nonpositive(d, f):
    with pytest.raises(NonPositiveInput):
        path_loss_db(d, f)


def line_topology(n=4, spacing=150.0):
    pos = np.array([[i * spacing, 0.0] for i in range(n)])
    return NetworkTopology(pos, [(2 * k, 2 * k + 1) for k in range(n // 2)], 4000.0)


def test_large_scale_gain_without_shadowing():
    topo = line_topology()
    g = large_scale_gain(topo, 5e9, 0.0, seed=1)
    d = topo.distances()
    for n in range(4):
        for k in range(4):
            if n == k:
                assert g[n, k] == 0
            else:
                assert g[n, k] == pytest.approx(10 ** (-fspl_oracle(d[n, k], 5e9) / 10), rel=1e-12)
    # equal distances give equal deterministic gains
    assert g[0, 1] == pytest.approx(g[1, 2])


def test_shadowing_standard_deviation():
    topo = line_topology(2)
    base = 10 ** (-path_loss_db(150.0, 5e9) / 10)
    draws = []
    # 2 off-diagonal entries per draw
    for seed in range(50_000):
        g = large_scale_gain(topo, 5e9, 9.5, seed)
        draws.extend([g[0, 1], g[1, 0]])
    db = 10 * np.log10(np.array(draws) / base)
    assert len(db) == 100_000
    assert abs(np.std(db) - 9.5) < 0.1
    assert abs(np.mean(db)) < 0.1


def test_rayleigh_mean_and_independence():
    mean = np.array([[0.0, 2.0], [2.0, 0.0]])
    draws = sample_rayleigh(np.broadcast_to(mean, (100_000, 2, 2)), 3)
    assert abs(draws[:, 0, 1].mean() / 2.0 - 1) < 0.02
    r = np.corrcoef(draws[:10_000, 0, 1], draws[:10_000, 1, 0])[0, 1]
    assert abs(r) < 0.05
    assert np.all(draws[:, 0, 0] == 0)


def test_rayleigh_single_matrix_deterministic():
    mean = np.ones((4, 4))
    assert np.array_equal(sample_rayleigh(mean, 4), sample_rayleigh(mean, 4))


def test_generate_dataset_deterministic():
    a = generate_dataset(ChannelConfig(), 3, 1)
    b = generate_dataset(ChannelConfig(), 3, 1)
    assert len(a) == 3
    for x, y in zip(a, b):
        assert np.array_equal(x.g, y.g)
    assert not np.array_equal(a[0].g, a[1].g)
    for s in a:
        assert s.n_nodes == 8
        assert np.all(np.isfinite(s.g)) and np.all(s.g >= 0)
        assert np.all(np.diag(s.g) == 0)


def test_generate_dataset_rejects_zero():
    with pytest.raises(ValueError):
        generate_dataset(ChannelConfig(), 0, 1)


def test_mixed_size_dataset():
    ds = generate_dataset(ChannelConfig(), 6, 2, pair_counts=[1, 2, 4])
    assert ds.node_counts == [2, 4, 8, 2, 4, 8]


def test_round_trip_bit_exact(tmp_path):
    ds = generate_dataset(ChannelConfig(n_pairs=3), 5, 7)
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    back = load_dataset(path)
    assert back.config == ds.config and back.seed == 7
    for x, y in zip(ds, back):
        assert x.g.tobytes() == y.g.tobytes()
    assert path.read_bytes()[:8] == b"FLEXDUP1"


def test_round_trip_mixed(tmp_path):
    ds = generate_dataset(ChannelConfig(), 4, 3, pair_counts=[1, 3])
    save_dataset(ds, tmp_path / "m.bin")
    back = load_dataset(tmp_path / "m.bin")
    assert back.node_counts == ds.node_counts
    assert all(np.array_equal(x.g, y.g) for x, y in zip(ds, back))


def test_truncated(tmp_path):
    ds = generate_dataset(ChannelConfig(n_pairs=1), 2, 7)
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    path.write_bytes(path.read_bytes()[:-5])
    with pytest.raises(TruncatedPayload):
        load_dataset(path)


def test_bad_magic(tmp_path):
    ds = generate_dataset(ChannelConfig(n_pairs=1), 2, 7)
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    path.write_bytes(b"NOTFLEX!" + path.read_bytes()[8:])
    with pytest.raises(CorruptHeader):
        load_dataset(path)


def test_unsupported_version(tmp_path):
    ds = generate_dataset(ChannelConfig(n_pairs=1), 1, 7)
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    raw = path.read_bytes().replace(b'"version": 1', b'"version": 9')
    path.write_bytes(raw)
    with pytest.raises(UnsupportedVersion):
        load_dataset(path)


def test_gain_matrix_validation():
    with pytest.raises(ValueError):
        GainMatrix(np.zeros((3, 3)), 1.0)
    with pytest.raises(ValueError):
        GainMatrix(-np.ones((2, 2)), 1.0)
    with pytest.raises(ValueError):
        GainMatrix(np.zeros((2, 2)), 0.0)


def test_config_from_dict():
    cfg = ChannelConfig.from_dict({"n_pairs": 2, "shadow_sigma_db": 0.0})
    assert cfg.n_pairs == 2
    with pytest.raises(ValueError):
        ChannelConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        ChannelConfig.from_dict({"n_pairs": 0})


def test_empty_dataset_header():
    ds = Dataset(ChannelConfig(), 0, [])
    assert ds.header()["sample_count"] == 0
