"""Channel gain generation (free-space path loss, log-normal shadowing,
Rayleigh fading) and the binary dataset format."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .topology import NetworkTopology, random_topology

SPEED_OF_LIGHT = 299_792_458.0

MAGIC = b"FLEXDUP1"
FORMAT_VERSION = 1


class NonPositiveInput(ValueError):
    pass


class DatasetError(ValueError):
    pass


class CorruptHeader(DatasetError):
    pass


class TruncatedPayload(DatasetError):
    pass


class UnsupportedVersion(DatasetError):
    pass


@dataclass
class GainMatrix:
    """Linear power gains ``g[n, k] = |h_{n,k}|^2`` (k transmits, n receives)."""

    g: np.ndarray
    noise: np.ndarray
    p_max: float = 1.0

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=np.float64)
        n = self.g.shape[0]
        if self.g.ndim != 2 or self.g.shape != (n, n) or n < 2 or n % 2:
            raise ValueError(f"gain matrix must be 2N x 2N, got shape {self.g.shape}")
        if not np.all(np.isfinite(self.g)) or np.any(self.g < 0):
            raise ValueError("gains must be finite and non-negative")
        self.noise = np.broadcast_to(np.asarray(self.noise, dtype=np.float64), (n,)).copy()
        if np.any(self.noise <= 0):
            raise ValueError("noise power must be positive")
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")

    @property
    def n_nodes(self) -> int:
        return self.g.shape[0]

    @property
    def n_pairs(self) -> int:
        return self.g.shape[0] // 2

    def permuted(self, pair_perm) -> "GainMatrix":
        """Relabel pairs: new pair k is old pair ``pair_perm[k]``."""
        idx = np.array([2 * p + s for p in pair_perm for s in (0, 1)])
        return GainMatrix(self.g[np.ix_(idx, idx)], self.noise[idx], self.p_max)


@dataclass
class ChannelConfig:
    area_side_m: float = 4000.0
    min_distance_m: float = 100.0
    frequency_hz: float = 5e9
    shadow_sigma_db: float = 9.5
    n_pairs: int = 4
    p_max_w: float = 1.0
    noise_w: float = 1e-13

    def validate(self):
        for name in ("area_side_m", "min_distance_m", "frequency_hz", "p_max_w", "noise_w"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.shadow_sigma_db < 0:
            raise ValueError("shadow_sigma_db must be non-negative")
        if int(self.n_pairs) != self.n_pairs or self.n_pairs < 1:
            raise ValueError("n_pairs must be a positive integer")
        return self

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown channel config fields: {sorted(unknown)}")
        return cls(**d).validate()


def path_loss_db(distance, frequency):
    """Free-space path loss in dB."""
    distance = np.asarray(distance, dtype=np.float64)
    if np.any(distance <= 0) or frequency <= 0:
        raise NonPositiveInput("distance and frequency must be positive")
    out = 20 * np.log10(distance) + 20 * np.log10(frequency) + 20 * np.log10(4 * np.pi / SPEED_OF_LIGHT)
    return float(out) if out.ndim == 0 else out


def large_scale_gain(topology: NetworkTopology, frequency, shadow_sigma_db, seed):
    """Mean power gain per ordered node pair; shadowing drawn per ordered pair."""
    rng = np.random.default_rng(seed)
    n = topology.n_nodes
    dist = topology.distances()
    off = ~np.eye(n, dtype=bool)
    loss = np.zeros((n, n))
    loss[off] = path_loss_db(dist[off], frequency)
    shadow = rng.normal(0.0, shadow_sigma_db, size=(n, n)) if shadow_sigma_db > 0 else 0.0
    gain = np.power(10.0, -(loss + shadow) / 10)
    gain[~off] = 0.0
    return gain


def sample_rayleigh(mean_gain, seed):
    """Rayleigh amplitude fading, i.e. unit-mean exponential power per entry."""
    mean_gain = np.asarray(mean_gain, dtype=np.float64)
    if np.any(mean_gain < 0):
        raise ValueError("mean gains must be non-negative")
    rng = np.random.default_rng(seed)
    return mean_gain * rng.exponential(1.0, size=mean_gain.shape)


def sample_gain_matrix(config: ChannelConfig, seed, n_pairs=None) -> GainMatrix:
    n_pairs = config.n_pairs if n_pairs is None else n_pairs
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    topo_seed, shadow_seed, fade_seed = ss.spawn(3)
    topo = random_topology(n_pairs, config.area_side_m, config.min_distance_m, topo_seed)
    mean = large_scale_gain(topo, config.frequency_hz, config.shadow_sigma_db, shadow_seed)
    g = sample_rayleigh(mean, fade_seed)
    return GainMatrix(g, config.noise_w, config.p_max_w)


@dataclass
class Dataset:
    config: ChannelConfig
    seed: int
    samples: list[GainMatrix] = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def node_counts(self) -> list[int]:
        return [s.n_nodes for s in self.samples]

    def header(self) -> dict:
        counts = self.node_counts
        uniform = len(set(counts)) <= 1
        h = {
            "version": FORMAT_VERSION,
            "n_nodes": counts[0] if counts and uniform else 0,
            "sample_count": len(self.samples),
            "p_max": self.config.p_max_w,
            "noise_power": self.config.noise_w,
            "seed": self.seed,
            "config": asdict(self.config),
        }
        if not uniform:
            h["node_counts"] = counts
        return h


def generate_dataset(config: ChannelConfig, sample_count, seed, pair_counts: Sequence[int] | None = None):
    """Independent samples, each with a fresh topology and fading draw.

    Sample ``i`` draws from its own seed derived from ``(seed, i)``. With
    ``pair_counts`` the network size cycles through the given list.
    """
    config.validate()
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    samples = []
    for i in range(sample_count):
        n_pairs = None if pair_counts is None else pair_counts[i % len(pair_counts)]
        samples.append(sample_gain_matrix(config, np.random.SeedSequence([seed, i]), n_pairs))
    return Dataset(config=config, seed=seed, samples=samples)


def concat_datasets(datasets: Sequence[Dataset]) -> Dataset:
    first = datasets[0]
    return Dataset(first.config, first.seed, [s for d in datasets for s in d.samples])


def save_dataset(dataset: Dataset, path):
    header = json.dumps(dataset.header(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for s in dataset.samples:
            fh.write(np.ascontiguousarray(s.g, dtype="<f8").tobytes())


def load_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CorruptHeader(f"{path}: bad magic bytes")
    (hlen,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    if start + hlen > len(raw):
        raise TruncatedPayload(f"{path}: header extends past end of file")
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptHeader(f"{path}: unreadable header ({exc})") from None
    if not isinstance(header, dict) or "version" not in header:
        raise CorruptHeader(f"{path}: header missing version")
    if header["version"] != FORMAT_VERSION:
        raise UnsupportedVersion(f"{path}: format version {header['version']}")
    try:
        count = int(header["sample_count"])
        counts = header.get("node_counts") or [int(header["n_nodes"])] * count
        config = ChannelConfig.from_dict(header["config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptHeader(f"{path}: invalid header ({exc})") from None
    if len(counts) != count:
        raise CorruptHeader(f"{path}: node_counts length does not match sample_count")

    offset = start + hlen
    expected = offset + 8 * sum(n * n for n in counts)
    if len(raw) < expected:
        raise TruncatedPayload(f"{path}: expected {expected} bytes, found {len(raw)}")
    if len(raw) > expected:
        raise CorruptHeader(f"{path}: {len(raw) - expected} trailing bytes")
    samples = []
    for n in counts:
        g = np.frombuffer(raw, dtype="<f8", count=n * n, offset=offset).reshape(n, n).astype(np.float64)
        offset += 8 * n * n
        samples.append(GainMatrix(g, header["noise_power"], header["p_max"]))
    return Dataset(config=config, seed=header["seed"], samples=samples)
