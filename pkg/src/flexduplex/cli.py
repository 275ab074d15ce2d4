"""Command-line harness: generate datasets, train Flex-Net, benchmark methods.

Every command prints its effective configuration as a ``# config:`` JSON
line first; feeding that JSON back through ``--config`` reproduces the run.
Settings resolve as defaults, then the config file, then explicit flags.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from contextlib import nullcontext
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import benchmark, flexnet
from .objective import sum_rate
from .channel import ChannelConfig, DatasetError, generate_dataset, load_dataset, save_dataset
from .solvers import MAX_EXHAUSTIVE_PAIRS, TooManyPairs
from .topology import InfeasiblePacking

log = logging.getLogger("flexduplex")

CHANNEL_DEFAULTS = asdict(ChannelConfig())
TRAIN_DEFAULTS = {f.name: f.default for f in fields(flexnet.TrainConfig)}

DEFAULTS = {
    "generate": {**CHANNEL_DEFAULTS, "count": 1000, "seed": 0, "mixed_pairs": None, "out": None},
    "train": {**TRAIN_DEFAULTS, "data": None, "out": None, "history": None, "plot": False},
    "evaluate": {
        "data": None,
        "model": None,
        "methods": list(benchmark.METHODS),
        "seed": 0,
        "epsilon": 1e-3,
        "workers": 1,
        "out": None,
        "plot": False,
    },
    "bench-time": {
        **CHANNEL_DEFAULTS,
        "pairs": [2, 4, 8],
        "count": 100,
        "seed": 0,
        "model": None,
        "methods": ["flexnet", "heuristic", "exhaustive"],
        "exhaustive_max_pairs": 8,
        "epsilon": 1e-3,
        "out": None,
        "plot": False,
    },
    "generalize": {
        **CHANNEL_DEFAULTS,
        **TRAIN_DEFAULTS,
        "pairs": [2, 4, 8],
        "train_count": 10_000,
        "test_count": 1000,
        "workers": 1,
        "out": None,
        "plot": False,
    },
}
for _cmd in ("bench-time", "generalize"):
    DEFAULTS[_cmd].pop("n_pairs")

REQUIRED = {
    "generate": ("out",),
    "train": ("data", "out"),
    "evaluate": ("data", "out"),
    "bench-time": ("out",),
    "generalize": ("out",),
}


class UsageError(Exception):
    pass


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("pair counts must be positive integers")
    return values


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _channel_flags(p, with_pairs=True):
    g = p.add_argument_group("channel")
    if with_pairs:
        g.add_argument("--pairs", dest="n_pairs", type=_positive_int, help="user pairs per network (default 4)")
    g.add_argument("--area", dest="area_side_m", type=float, help="side of the square area in metres (default 4000)")
    g.add_argument("--min-distance", dest="min_distance_m", type=float, help="minimum node spacing in metres (default 100)")
    g.add_argument("--frequency", dest="frequency_hz", type=float, help="carrier frequency in Hz (default 5e9)")
    g.add_argument("--shadowing", dest="shadow_sigma_db", type=float, help="log-normal shadowing std in dB (default 9.5)")
    g.add_argument("--p-max", dest="p_max_w", type=float, help="per-node power budget in W (default 1)")
    g.add_argument("--noise", dest="noise_w", type=float, help="receiver noise power in W (default 1e-13)")


def _train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, help="ADAM learning rate (default 0.0002)")
    g.add_argument("--batch", dest="batch_size", type=_positive_int, help="mini-batch size (default 64)")
    g.add_argument("--epochs", type=_positive_int, help="passes over the training set (default 50)")
    g.add_argument("--layers", type=_positive_int, help="message passing layers (default 3)")
    g.add_argument("--hidden", type=_positive_int, help="aggregation width H (default 64)")
    g.add_argument("--mlp-hidden", dest="mlp_hidden", type=_positive_int, help="head hidden width (default 64)")
    g.add_argument("--temp-power", dest="temp_power", type=float, help="power head temperature")
    g.add_argument("--temp-direction", dest="temp_direction", type=float, help="direction head temperature")
    g.add_argument("--pooling", choices=flexnet.POOLINGS, help="aggregation (default sum)")
    g.add_argument("--direction-noise", dest="direction_noise", type=float,
                   help="logistic noise scale on direction logits while training (default 1.0)")
    g.add_argument("--power-noise", dest="power_noise", type=float,
                   help="logistic noise scale on power logits while training (default 0)")
    g.add_argument("--lr-schedule", dest="lr_schedule", choices=flexnet.LR_SCHEDULES,
                   help="constant or cosine decay (default constant)")


def build_parser():
    parser = argparse.ArgumentParser(prog="flexduplex", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="JSON file of settings; explicit flags win")
        return p

    p = command("generate", "write a dataset of random gain matrices")
    _channel_flags(p)
    p.add_argument("--count", type=_positive_int, help="number of samples (default 1000)")
    p.add_argument("--seed", type=int, help="master seed (default 0)")
    p.add_argument("--mixed-pairs", dest="mixed_pairs", type=_int_list, help="cycle network sizes, e.g. 2,4,8")
    p.add_argument("--out", help="output dataset file")

    p = command("train", "train Flex-Net on a dataset")
    p.add_argument("--data", help="training dataset file")
    p.add_argument("--out", help="checkpoint file to write (JSON)")
    p.add_argument("--history", help="loss history CSV (default: <out stem>_history.csv)")
    p.add_argument("--seed", type=int, help="initialization and shuffling seed (default 0)")
    _train_flags(p)
    p.add_argument("--plot", action="store_true", default=None, help="also save a PNG next to the history CSV")

    p = command("evaluate", "compare methods on a test dataset")
    p.add_argument("--data", help="test dataset file")
    p.add_argument("--model", help="Flex-Net checkpoint (needed for flexnet)")
    p.add_argument("--methods", type=_str_list, help=f"comma-separated subset of {','.join(benchmark.METHODS)}")
    p.add_argument("--seed", type=int, help="heuristic restart seed (default 0)")
    p.add_argument("--epsilon", type=float, help="heuristic stopping threshold (default 1e-3)")
    p.add_argument("--workers", type=_positive_int, help="processes for evaluation (default 1)")
    p.add_argument("--out", help="results CSV")
    p.add_argument("--plot", action="store_true", default=None, help="also save a PNG next to the CSV")

    p = command("bench-time", "per-sample running time against network size")
    _channel_flags(p, with_pairs=False)
    p.add_argument("--pairs", type=_int_list, help="network sizes, e.g. 2,4,8,16")
    p.add_argument("--count", type=_positive_int, help="instances per size (default 100)")
    p.add_argument("--seed", type=int, help="data seed (default 0)")
    p.add_argument("--model", help="Flex-Net checkpoint (default: untrained weights, same cost)")
    p.add_argument("--methods", type=_str_list, help="methods to time")
    p.add_argument("--exhaustive-max-pairs", dest="exhaustive_max_pairs", type=_positive_int,
                   help="skip exhaustive above this size (default 8)")
    p.add_argument("--epsilon", type=float, help="heuristic stopping threshold (default 1e-3)")
    p.add_argument("--out", help="timing CSV")
    p.add_argument("--plot", action="store_true", default=None, help="also save a PNG next to the CSV")

    p = command("generalize", "mixed-size model against per-size models")
    _channel_flags(p, with_pairs=False)
    _train_flags(p)
    p.add_argument("--pairs", type=_int_list, help="network sizes (default 2,4,8)")
    p.add_argument("--train-count", dest="train_count", type=_positive_int, help="training samples per model (default 10000)")
    p.add_argument("--test-count", dest="test_count", type=_positive_int, help="test samples per size (default 1000)")
    p.add_argument("--seed", type=int, help="data and training seed (default 0)")
    p.add_argument("--workers", type=_positive_int, help="processes for evaluation (default 1)")
    p.add_argument("--out", help="comparison CSV")
    p.add_argument("--plot", action="store_true", default=None, help="also save a PNG next to the CSV")
    return parser


def resolve(command, args) -> dict:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    cfg = dict(DEFAULTS[command])
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        cfg.update(loaded)
    for key, value in vars(args).items():
        if key in cfg and value is not None:
            cfg[key] = value
    missing = [k for k in REQUIRED[command] if not cfg.get(k)]
    if missing:
        raise UsageError(f"{command}: missing required setting(s): {', '.join('--' + m for m in missing)}")
    return cfg


def _channel_config(cfg, n_pairs=None) -> ChannelConfig:
    names = {f.name for f in fields(ChannelConfig)}
    values = {k: cfg[k] for k in names if k in cfg}
    if n_pairs is not None:
        values["n_pairs"] = n_pairs
    try:
        return ChannelConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _train_config(cfg) -> flexnet.TrainConfig:
    try:
        return flexnet.TrainConfig(**{k: cfg[k] for k in TRAIN_DEFAULTS}).validate()
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None


def _write_csv(path, header, rows, comments=()):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _fmt(x):
    if isinstance(x, float):
        return "" if math.isnan(x) else repr(x)
    return x


def _figure_path(csv_path):
    return Path(csv_path).with_suffix(".png")


def cmd_generate(cfg):
    config = _channel_config(cfg)
    dataset = generate_dataset(config, cfg["count"], cfg["seed"], cfg["mixed_pairs"])
    save_dataset(dataset, cfg["out"])
    sizes = sorted(set(G.n_pairs for G in dataset))
    print(f"wrote {len(dataset)} samples ({', '.join(map(str, sizes))} pairs) to {cfg['out']}")


def cmd_train(cfg):
    dataset = load_dataset(cfg["data"])
    config = _train_config(cfg)

    def progress(epoch, value):
        log.info("epoch %d/%d loss %.5f", epoch, config.epochs, value)

    params, history = flexnet.train(dataset, config, progress=progress)
    flexnet.save_model(params, cfg["out"])
    hist_path = cfg["history"] or str(Path(cfg["out"]).with_name(Path(cfg["out"]).stem + "_history.csv"))
    _write_csv(hist_path, ("epoch", "mean_loss"), [(i + 1, repr(v)) for i, v in enumerate(history)])
    if cfg["plot"]:
        from . import plotting

        plotting.loss_history(history, _figure_path(hist_path))
    best = int(np.argmin(history)) + 1
    print(f"trained {config.epochs} epochs on {len(dataset)} samples; best epoch {best} loss {min(history):.5f}")
    print(f"checkpoint {cfg['out']}, history {hist_path}")


def cmd_evaluate(cfg):
    methods = cfg["methods"]
    try:
        benchmark.check_methods(methods)
    except benchmark.UnknownMethod as exc:
        raise UsageError(str(exc)) from None
    if "flexnet" in methods and not cfg["model"]:
        raise UsageError("flexnet evaluation needs --model")
    dataset = load_dataset(cfg["data"])
    params = flexnet.load_model(cfg["model"]) if "flexnet" in methods else None
    rows = benchmark.evaluate(dataset.samples, methods, params, cfg["seed"], cfg["epsilon"], cfg["workers"])
    _write_csv(
        cfg["out"],
        benchmark.BenchmarkRow.FIELDS,
        [[_fmt(v) for v in r.as_dict().values()] for r in rows],
        comments=[
            "ratio = mean rate / mean exhaustive rate over the same instances",
            "mean_seconds excludes dataset load and graph construction",
        ],
    )
    if cfg["plot"]:
        from . import plotting

        plotting.rate_ratios(rows, _figure_path(cfg["out"]))
    for r in rows:
        ratio = "" if math.isnan(r.ratio) else f" ratio {r.ratio:.4f}"
        print(f"{r.method:16s} pairs {r.n_pairs!s:>3} rate {r.mean_rate:.4f}{ratio} time {r.mean_seconds:.2e}s")


def _single_thread():
    """Limit BLAS/OpenMP pools to one thread for fair timing."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional
        log.warning("threadpoolctl not installed; cannot pin BLAS to one thread")
        return nullcontext()
    return threadpool_limits(limits=1)


def cmd_bench_time(cfg):
    methods = cfg["methods"]
    try:
        benchmark.check_methods(methods)
    except benchmark.UnknownMethod as exc:
        raise UsageError(str(exc)) from None
    if cfg["model"]:
        params = flexnet.load_model(cfg["model"])
    else:
        params = flexnet.init_params(flexnet.TrainConfig(), norm_p_max=cfg["p_max_w"], norm_noise=cfg["noise_w"])
    limit = min(cfg["exhaustive_max_pairs"], MAX_EXHAUSTIVE_PAIRS)
    rows = []
    with _single_thread():
        for n_pairs in cfg["pairs"]:
            samples = generate_dataset(_channel_config(cfg, n_pairs), cfg["count"], cfg["seed"]).samples
            for m in methods:
                if m == "exhaustive" and n_pairs > limit:
                    print(f"skipping exhaustive at {n_pairs} pairs (limit {limit})", file=sys.stderr)
                    continue
                if m == "flexnet":
                    seconds = benchmark.time_flexnet(samples, params)
                else:
                    per = benchmark.run_methods(samples, [m], seed=cfg["seed"], epsilon=cfg["epsilon"])
                    seconds = float(np.mean([r[m][1] for r in per]))
                rows.append((m, n_pairs, seconds))
                print(f"{m:16s} pairs {n_pairs:3d} {seconds:.3e} s/sample")
    _write_csv(
        cfg["out"],
        ("method", "n_pairs", "mean_seconds"),
        [(m, n, repr(s)) for m, n, s in rows],
        comments=["single-threaded; excludes dataset load and graph construction"],
    )
    if cfg["plot"]:
        from . import plotting

        plotting.run_times(rows, _figure_path(cfg["out"]))


GENERALIZE_FIELDS = ("model_kind", "n_pairs", "mean_rate", "exhaustive_rate", "ratio", "sample_count", "seed")


def generalization_study(cfg, progress=print):
    """Per-size models and one mixed-size model, scored on per-size test sets.

    Every model sees ``train_count`` training samples; the mixed set cycles
    through the sizes. Returns a list of dict rows.
    """
    config = _train_config(cfg)
    seed = cfg["seed"]
    sizes = cfg["pairs"]
    base = _channel_config(cfg, sizes[0])
    tests = {n: generate_dataset(_channel_config(cfg, n), cfg["test_count"], seed + 1).samples for n in sizes}
    reference = {}
    for n, samples in tests.items():
        per = benchmark.run_methods(samples, ["exhaustive"], workers=cfg["workers"])
        reference[n] = float(np.mean([r["exhaustive"][0] for r in per]))
        progress(f"exhaustive reference at {n} pairs: {reference[n]:.4f}")

    models = {}
    for n in sizes:
        data = generate_dataset(_channel_config(cfg, n), cfg["train_count"], seed)
        models[("per-size", n)] = flexnet.train(data, config)[0]
        progress(f"trained per-size model for {n} pairs")
    mixed = generate_dataset(base, cfg["train_count"], seed, pair_counts=sizes)
    mixed_params = flexnet.train(mixed, config)[0]
    progress("trained mixed-size model")
    for n in sizes:
        models[("single", n)] = mixed_params

    rows = []
    for (kind, n), params in models.items():
        allocs = flexnet.infer_batch(tests[n], params)
        rate = float(np.mean([sum_rate(G, a) for G, a in zip(tests[n], allocs)]))
        rows.append(
            {
                "model_kind": kind,
                "n_pairs": n,
                "mean_rate": rate,
                "exhaustive_rate": reference[n],
                "ratio": rate / reference[n],
                "sample_count": len(tests[n]),
                "seed": seed,
            }
        )
    return rows


def cmd_generalize(cfg):
    rows = generalization_study(cfg)
    _write_csv(cfg["out"], GENERALIZE_FIELDS, [[_fmt(r[k]) for k in GENERALIZE_FIELDS] for r in rows])
    if cfg["plot"]:
        from . import plotting

        plotting.generalization(rows, _figure_path(cfg["out"]))
    for r in rows:
        print(f"{r['model_kind']:9s} pairs {r['n_pairs']:3d} ratio {r['ratio']:.4f}")


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "bench-time": cmd_bench_time,
    "generalize": cmd_generalize,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = resolve(args.command, args)
        print("# config: " + json.dumps({"command": args.command, **cfg}, sort_keys=True), flush=True)
        COMMANDS[args.command](cfg)
    except UsageError as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, DatasetError, InfeasiblePacking, TooManyPairs, flexnet.SchemaMismatch,
            flexnet.UnsupportedVersion, flexnet.EmptyDataset, ValueError) as exc:
        print(f"{parser.prog} {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
