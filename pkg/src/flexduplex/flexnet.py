"""Flex-Net: a two-stage message passing network that outputs per-node
transmit powers and per-pair link directions, trained without labels by
maximizing the relaxed sum-rate."""
from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channel import Dataset, GainMatrix
from .graphrep import FlexGraph, batch_graphs, build_graph
from .objective import Allocation
from .solvers import SolverResult, _result

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
POOLINGS = ("sum", "max")
LR_SCHEDULES = ("constant", "cosine")


class DimensionMismatch(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class UnsupportedVersion(ValueError):
    pass


@dataclass
class TrainConfig:
    # 0.002 is unstable once direction noise is on; see README
    lr: float = 0.0002
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    layers: int = 3
    hidden: int = 64
    mlp_hidden: int = 64
    temp_power: float = 0.1
    temp_direction: float = 0.1
    pooling: str = "sum"
    # scales of logistic noise added to head logits while training. Noise on
    # the direction logits keeps the model from parking pairs at d = 0.5,
    # where the relaxed rate overstates what a binary choice can reach.
    direction_noise: float = 1.0
    power_noise: float = 0.0
    # "constant", or "cosine": decay from lr to lr_floor * lr over all steps
    lr_schedule: str = "constant"
    lr_floor: float = 0.01

    def learning_rate(self, step, total_steps):
        if self.lr_schedule == "constant" or total_steps <= 1:
            return self.lr
        frac = min(step / (total_steps - 1), 1.0)
        low = self.lr * self.lr_floor
        return low + 0.5 * (self.lr - low) * (1.0 + math.cos(math.pi * frac))

    def validate(self):
        for name in ("lr", "temp_power", "temp_direction"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("batch_size", "epochs", "layers", "hidden", "mlp_hidden"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v}")
        if self.direction_noise < 0 or self.power_noise < 0:
            raise ValueError("logit noise scales must be non-negative")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ValueError(f"lr_schedule must be one of {LR_SCHEDULES}, got {self.lr_schedule!r}")
        if not 0 <= self.lr_floor <= 1:
            raise ValueError("lr_floor must lie in [0, 1]")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        return self


@dataclass
class ModelParams:
    layers: int
    hidden: int
    mlp_hidden: int
    temp_power: float
    temp_direction: float
    pooling: str
    norm_p_max: float
    norm_noise: float
    weights: dict[str, Tensor] = field(default_factory=dict)

    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self.weights.items()}

    def copy(self) -> "ModelParams":
        out = copy.copy(self)
        out.weights = {k: Tensor(v.value.copy(), requires_grad=True, name=k) for k, v in self.weights.items()}
        return out


def expected_shapes(layers, hidden, mlp_hidden) -> dict[str, tuple]:
    h, m = hidden, mlp_hidden
    emb = 1 + h  # vertex feature || pooled message
    shapes = {}
    for layer in range(layers):
        d_in = 1 if layer == 0 else emb
        shapes[f"l{layer}.W_u_intf"] = (d_in, h)
        shapes[f"l{layer}.W_v_intf"] = (d_in, h)
        shapes[f"l{layer}.W_e_intf"] = (1, h)
        shapes[f"l{layer}.W_u_dsr"] = (emb, h)
        shapes[f"l{layer}.W_v_dsr"] = (emb, h)
    for head, d_in in (("power", emb), ("direction", 2 * emb)):
        dims = [d_in, m, m, 1]
        for i in range(3):
            shapes[f"{head}.W{i}"] = (dims[i], dims[i + 1])
            shapes[f"{head}.b{i}"] = (dims[i + 1],)
    return shapes


def init_params(config: TrainConfig, seed=None, norm_p_max=1.0, norm_noise=1e-13) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, deterministic in seed.

    The output layer of each head is further scaled by its temperature so
    the initial sigmoid inputs do not depend on T. Without this, a small T
    saturates the heads at step zero and training stalls.
    """
    config.validate()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    out_scale = {"power": config.temp_power, "direction": config.temp_direction}
    weights = {}
    for name, shape in expected_shapes(config.layers, config.hidden, config.mlp_hidden).items():
        fan_in = shape[0] if len(shape) == 2 else expected_fan_in(name, config)
        bound = 1.0 / math.sqrt(fan_in)
        head, _, leaf = name.partition(".")
        if leaf in ("W2", "b2"):
            bound *= out_scale[head]
        weights[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)
    return ModelParams(
        layers=config.layers,
        hidden=config.hidden,
        mlp_hidden=config.mlp_hidden,
        temp_power=config.temp_power,
        temp_direction=config.temp_direction,
        pooling=config.pooling,
        norm_p_max=norm_p_max,
        norm_noise=norm_noise,
        weights=weights,
    )


def expected_fan_in(bias_name, config):
    head, idx = bias_name.split(".b")
    emb = 1 + config.hidden
    d_in = emb if head == "power" else 2 * emb
    return [d_in, config.mlp_hidden, config.mlp_hidden][int(idx)]


def _mlp(x, w, head):
    h = ad.relu(x @ w[f"{head}.W0"] + w[f"{head}.b0"])
    h = ad.relu(h @ w[f"{head}.W1"] + w[f"{head}.b1"])
    return h @ w[f"{head}.W2"] + w[f"{head}.b2"]


def _pool(pooling, x, seg, n):
    if pooling == "sum":
        return ad.segment_sum(x, seg, n)
    return ad.segment_max(x, seg, n)


def embed(graph: FlexGraph, params: ModelParams) -> Tensor:
    """Final-layer node embeddings, shape (V, 1 + hidden)."""
    w = params.weights
    V = graph.n_vertices
    x1 = Tensor(graph.vertex_feature.reshape(V, 1))
    e = Tensor(graph.intf_feature.reshape(-1, 1))
    src, dst = graph.intf_src, graph.intf_dst
    partner = graph.partner
    self_seg = np.arange(V)
    x = x1
    for layer in range(params.layers):
        if x.shape[1] != w[f"l{layer}.W_u_intf"].shape[0]:
            raise DimensionMismatch(f"layer {layer}: embedding width {x.shape[1]} does not match weights")
        # interference stage: messages along every potential interference edge
        xu = x @ w[f"l{layer}.W_u_intf"]
        xv = x @ w[f"l{layer}.W_v_intf"]
        msg = ad.relu(ad.gather(xu, src) + ad.gather(xv, dst) + e @ w[f"l{layer}.W_e_intf"])
        alpha_intf = _pool(params.pooling, msg, dst, V)
        c = ad.concat([x1, alpha_intf])
        # desired stage: the single partner across the desired edge
        cu = c @ w[f"l{layer}.W_u_dsr"]
        cv = c @ w[f"l{layer}.W_v_dsr"]
        msg = ad.relu(ad.gather(cu, partner) + cv)
        alpha_dsr = _pool(params.pooling, msg, self_seg, V)
        x = ad.concat([x1, alpha_dsr])
    return x


def forward(graph: FlexGraph, params: ModelParams, direction_noise=None, power_noise=None):
    """Relaxed outputs ``(p, d_pair, d)``.

    ``p`` is per node in (0, p_max), ``d_pair`` holds the transmit
    probability of the even node of each pair and ``d`` the per-node
    directions with ``d[2k+1] = 1 - d[2k]``.
    """
    V = graph.n_vertices
    x = embed(graph, params)
    w = params.weights
    logits_p = ad.reshape(_mlp(x, w, "power"), (V,))
    if power_noise is not None:
        logits_p = logits_p + power_noise
    p = ad.mul(ad.sigmoid(ad.scale(logits_p, 1.0 / params.temp_power)), Tensor(graph.p_max))

    even = np.arange(0, V, 2)
    pair_in = ad.concat([ad.gather(x, even), ad.gather(x, even + 1)])
    logits_d = ad.reshape(_mlp(pair_in, w, "direction"), (V // 2,))
    if direction_noise is not None:
        logits_d = logits_d + direction_noise
    d_pair = ad.sigmoid(ad.scale(logits_d, 1.0 / params.temp_direction))
    # node 2k reads d_pair[k], node 2k+1 reads the complement stored at P + k
    both = ad.concat([d_pair, 1.0 - d_pair], axis=0)
    lookup = np.empty(V, dtype=np.int64)
    lookup[0::2] = np.arange(V // 2)
    lookup[1::2] = V // 2 + np.arange(V // 2)
    d = ad.gather(both, lookup)
    return p, d_pair, d


def relaxed_rate_tensor(graph: FlexGraph, p: Tensor, d: Tensor) -> Tensor:
    """Total relaxed sum-rate over every graph in the (batched) graph."""
    s = ad.mul(p, d)
    signal = ad.mul(ad.gather(s, graph.partner), Tensor(graph.desired_snr_gain))
    received = ad.mul(ad.gather(s, graph.intf_src), Tensor(graph.intf_snr_gain))
    interference = ad.segment_sum(received, graph.intf_dst, graph.n_vertices)
    sinr = ad.div(signal, interference + 1.0)
    return ad.sum(ad.log2_1p(sinr))


def loss(graph: FlexGraph, outputs) -> Tensor:
    """Negative relaxed sum-rate averaged over the graphs in the batch."""
    p, _, d = outputs
    return ad.scale(relaxed_rate_tensor(graph, p, d), -1.0 / graph.n_graphs)


def model_graph(G: GainMatrix, params: ModelParams) -> FlexGraph:
    return build_graph(G, params.norm_p_max, params.norm_noise)


def sample_loss(G: GainMatrix, params: ModelParams) -> Tensor:
    graph = model_graph(G, params)
    return loss(graph, forward(graph, params))


def _grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: (t.grad if t.grad is not None else np.zeros_like(t.value)) for k, t in params.weights.items()}


def train(dataset: Dataset | Sequence[GainMatrix], config: TrainConfig, params: ModelParams | None = None, progress=None):
    """Mini-batch ADAM on the negative relaxed sum-rate.

    Returns ``(best_params, history)`` where history holds the mean training
    loss of every epoch and best_params are the weights at the end of the
    epoch with the lowest mean loss.
    """
    config.validate()
    samples = list(dataset)
    if not samples:
        raise EmptyDataset("training needs at least one sample")
    if params is None:
        params = init_params(config, norm_p_max=samples[0].p_max, norm_noise=float(samples[0].noise[0]))
    graphs = [model_graph(G, params) for G in samples]
    rng = np.random.default_rng(config.seed)
    state = ad.AdamState(lr=config.lr)
    history = []
    steps_per_epoch = -(-len(graphs) // config.batch_size)
    total_steps = steps_per_epoch * config.epochs
    best_loss, best = np.inf, params.copy()
    for epoch in range(config.epochs):
        order = rng.permutation(len(graphs))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = batch_graphs([graphs[i] for i in idx])
            for t in params.weights.values():
                t.zero_grad()
            d_noise = p_noise = None
            if config.direction_noise > 0:
                d_noise = config.direction_noise * rng.logistic(size=batch.n_vertices // 2)
            if config.power_noise > 0:
                p_noise = config.power_noise * rng.logistic(size=batch.n_vertices)
            value = loss(batch, forward(batch, params, d_noise, p_noise))
            value.backward()
            state.lr = config.learning_rate(state.step, total_steps)
            ad.adam_step(params.weights, _grads(params), state)
            total += float(value.value) * len(idx)
        mean_loss = total / len(graphs)
        history.append(mean_loss)
        if mean_loss < best_loss:
            best_loss, best = mean_loss, params.copy()
        log.info("epoch %d mean loss %.6f", epoch + 1, mean_loss)
        if progress is not None:
            progress(epoch + 1, mean_loss)
    return best, history


def predict(G: GainMatrix, params: ModelParams, graph: FlexGraph | None = None):
    """Relaxed ``(p, d_pair)`` as plain arrays."""
    graph = model_graph(G, params) if graph is None else graph
    with ad.no_grad():
        p, d_pair, _ = forward(graph, params)
    return p.value, d_pair.value


def binarize(G: GainMatrix, p, d_pair) -> Allocation:
    """Even node transmits iff its relaxed direction is at least 0.5; receivers get zero power."""
    d = np.empty(G.n_nodes)
    d[0::2] = (np.asarray(d_pair) >= 0.5).astype(float)
    d[1::2] = 1.0 - d[0::2]
    return Allocation(np.clip(p, 0.0, G.p_max) * d, d)


def infer(G: GainMatrix, params: ModelParams, graph: FlexGraph | None = None) -> SolverResult:
    """Binarized allocation for one sample.

    Pass a prebuilt ``graph`` to keep graph construction out of the
    reported wall time.
    """
    graph = model_graph(G, params) if graph is None else graph
    t0 = time.perf_counter()
    alloc = binarize(G, *predict(G, params, graph))
    return _result(G, alloc.p, alloc.d, "flexnet", t0)


def infer_batch(samples: Sequence[GainMatrix], params: ModelParams, batch_size=256) -> list[Allocation]:
    """Binarized allocations for many samples using batched forward passes."""
    out = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        batch = batch_graphs([model_graph(G, params) for G in chunk])
        with ad.no_grad():
            p, d_pair, _ = forward(batch, params)
        offset = 0
        for G in chunk:
            n = G.n_nodes
            out.append(binarize(G, p.value[offset : offset + n], d_pair.value[offset // 2 : (offset + n) // 2]))
            offset += n
    return out


# checkpoints

def to_dict(params: ModelParams) -> dict:
    return {
        "format_version": CHECKPOINT_VERSION,
        "layers": params.layers,
        "hidden": params.hidden,
        "mlp_hidden": params.mlp_hidden,
        "temperatures": {"power": params.temp_power, "direction": params.temp_direction},
        "pooling": params.pooling,
        "normalization": {"p_max": params.norm_p_max, "noise": params.norm_noise},
        "weights": {k: v.value.tolist() for k, v in params.weights.items()},
    }


def from_dict(doc: dict) -> ModelParams:
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise SchemaMismatch("checkpoint lacks format_version")
    if doc["format_version"] != CHECKPOINT_VERSION:
        raise UnsupportedVersion(f"checkpoint format version {doc['format_version']}")
    try:
        temps, norm, raw = doc["temperatures"], doc["normalization"], doc["weights"]
        params = ModelParams(
            layers=int(doc["layers"]),
            hidden=int(doc["hidden"]),
            mlp_hidden=int(doc["mlp_hidden"]),
            temp_power=float(temps["power"]),
            temp_direction=float(temps["direction"]),
            pooling=str(doc["pooling"]),
            norm_p_max=float(norm["p_max"]),
            norm_noise=float(norm["noise"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaMismatch(f"checkpoint missing or malformed field: {exc}") from None
    if params.pooling not in POOLINGS:
        raise SchemaMismatch(f"unknown pooling {params.pooling!r}")
    want = expected_shapes(params.layers, params.hidden, params.mlp_hidden)
    if set(raw) != set(want):
        raise SchemaMismatch(f"weight names differ: missing {sorted(set(want) - set(raw))}, extra {sorted(set(raw) - set(want))}")
    for name, shape in want.items():
        arr = np.asarray(raw[name], dtype=np.float64)
        if arr.shape != shape:
            raise SchemaMismatch(f"{name}: shape {arr.shape}, expected {shape}")
        params.weights[name] = Tensor(arr, requires_grad=True, name=name)
    return params


def save_model(params: ModelParams, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_dict(params), fh)


def load_model(path) -> ModelParams:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaMismatch(f"{path}: not JSON ({exc})") from None
    return from_dict(doc)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
