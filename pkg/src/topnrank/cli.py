"""Command-line entry point: prepare, train, evaluate, ablation, benchmark.

Every run writes a manifest.json with the resolved configuration, input
digests and emitted files; delimited result files start with a comment line
naming that manifest, and report figures are rendered next to them.

Exit codes: 0 success, 2 usage, 3 I/O, 4 parse or data error, 5 divergence.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, figures
from .data import (
    RatingsParseError,
    file_digest,
    filter_sparse_users,
    implicit_user_groups,
    load_ratings,
    sniff_layout,
    split_half,
    to_implicit,
    to_implicit_with_maps,
    write_ratings,
)
from .evaluation import (
    DEFAULT_CUTOFFS,
    derived_seed,
    ndcg_report,
    run_ablation,
)
from .model import init_width, load_checkpoint, save_checkpoint
from .objective import DivergenceError, Smoothing
from .training import TrainConfig, benchmark_scaling, doubling_ratios, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_DIVERGED = 5

MANIFEST_NAME = "manifest.json"

# built-in defaults; flags beat config-file entries beat these
DEFAULTS = {
    "min_count": 10,
    "threshold": 4.0,
    "seed": 0,
    "k": 10,
    "top_n": 20,
    "lr": None,
    "lambda": 0.1,
    "batch_frac": 0.10,
    "max_iters": 30,
    "epsilon": 0.1,
    "smoothing": "relu",
    "sigmoid_c": 7.0,
    "algorithm": "fast-relu",
    "no_truncate": False,
    "negative_gain": False,
    "repeats": 5,
    "cutoffs": "1,3,5,10,20",
    "sizes": "100,200,400,800",
    "n_users": 10,
    "trials": 3,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RatingsParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        last = getattr(exc, "iteration", None)
        done = len(getattr(exc, "records", []) or [])
        print(
            f"error: {exc}; last completed iteration: {done}"
            + (f" (failed during iteration {last})" if last else ""),
            file=sys.stderr,
        )
        return EXIT_DIVERGED
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="topnrank",
        description="List-wise top-N recommendation via weighted truncated DCG.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    prepare = sub.add_parser(
        "prepare", help="filter a ratings file and emit per-repeat splits"
    )
    prepare.add_argument("--input", required=True, help="ratings file (csv/tsv)")
    prepare.add_argument("--output", required=True, help="output directory")
    prepare.add_argument("--config", help="JSON file with flag defaults")
    prepare.add_argument("--min-count", type=int)
    prepare.add_argument("--threshold", type=float)
    prepare.add_argument("--seed", type=int)
    prepare.add_argument("--repeats", type=int)
    prepare.set_defaults(func=cmd_prepare)

    tr = sub.add_parser("train", help="train a model on a ratings file")
    tr.add_argument("--input", required=True, help="training ratings file")
    tr.add_argument("--output", required=True, help="output directory")
    tr.add_argument("--config", help="JSON file with flag defaults")
    tr.add_argument("--idmap", help="idmap.json fixing the index space")
    tr.add_argument("--threshold", type=float)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--k", type=int)
    tr.add_argument("--top-n", type=int)
    tr.add_argument("--no-truncate", action="store_true", default=None)
    tr.add_argument("--smoothing", choices=["relu", "sigmoid"])
    tr.add_argument("--sigmoid-c", type=float)
    tr.add_argument("--algorithm", choices=["generic", "fast-relu"])
    tr.add_argument("--lr", type=float)
    tr.add_argument("--lambda", dest="reg", type=float)
    tr.add_argument("--batch-frac", type=float)
    tr.add_argument("--max-iters", type=int)
    tr.add_argument("--epsilon", type=float)
    tr.add_argument("--negative-gain", action="store_true", default=None)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="score a test file against a checkpoint")
    ev.add_argument("--model", required=True, help="model checkpoint (.npz)")
    ev.add_argument("--input", required=True, help="test ratings file")
    ev.add_argument("--output", required=True, help="output directory")
    ev.add_argument("--config", help="JSON file with flag defaults")
    ev.add_argument("--cutoffs", help="comma-separated cutoffs")
    ev.set_defaults(func=cmd_evaluate)

    ab = sub.add_parser("ablation", help="run the four-variant grid")
    ab.add_argument("--input", required=True, help="full ratings file (pre-split)")
    ab.add_argument("--output", required=True, help="output directory")
    ab.add_argument("--config", help="JSON file with flag defaults")
    ab.add_argument("--min-count", type=int)
    ab.add_argument("--threshold", type=float)
    ab.add_argument("--seed", type=int)
    ab.add_argument("--k", type=int)
    ab.add_argument("--top-n", type=int)
    ab.add_argument("--lr", type=float)
    ab.add_argument("--lambda", dest="reg", type=float)
    ab.add_argument("--batch-frac", type=float)
    ab.add_argument("--max-iters", type=int)
    ab.add_argument("--epsilon", type=float)
    ab.add_argument("--repeats", type=int)
    ab.add_argument("--cutoffs", help="comma-separated cutoffs")
    ab.set_defaults(func=cmd_ablation)

    bench = sub.add_parser("benchmark", help="per-iteration scaling of both trainers")
    bench.add_argument("--output", required=True, help="output directory")
    bench.add_argument("--config", help="JSON file with flag defaults")
    bench.add_argument("--sizes", help="comma-separated items-per-user values")
    bench.add_argument("--n-users", type=int, help="users per iteration batch")
    bench.add_argument("--k", type=int)
    bench.add_argument("--trials", type=int)
    bench.add_argument("--seed", type=int)
    bench.set_defaults(func=cmd_benchmark)

    return parser


class Resolver:
    """flags > config file > built-in defaults, recording the result."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.from_file = {}
        config_path = getattr(args, "config", None)
        if config_path:
            with open(config_path, "r", encoding="utf-8") as fh:
                self.from_file = json.load(fh)
            if not isinstance(self.from_file, dict):
                raise ValueError(f"config file {config_path} must hold a JSON object")
        self.resolved: dict = {}

    def get(self, key: str, attr: str | None = None):
        attr = attr or key
        value = getattr(self.args, attr, None)
        if value is None:
            value = self.from_file.get(key, DEFAULTS.get(key))
        self.resolved[key] = value
        return value


def parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(part) for part in str(text).split(",") if part.strip()]
    except ValueError as exc:
        raise ValueError(f"bad {what} list {text!r}") from exc
    if not values or any(v < 1 for v in values):
        raise ValueError(f"{what} values must be positive integers, got {text!r}")
    return values


def write_table(path: Path, header: list[str], rows) -> Path:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# manifest: {MANIFEST_NAME}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def write_manifest(outdir: Path, command: str, resolved: dict,
                   inputs: dict, outputs: list[str], extra: dict | None = None) -> Path:
    payload = {
        "tool": "topnrank",
        "version": __version__,
        "command": command,
        "config": {k: v for k, v in sorted(resolved.items())},
        "inputs": inputs,
        "outputs": sorted(outputs),
        "created_unix": int(time.time()),
    }
    if extra:
        payload.update(extra)
    path = outdir / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _outdir(args) -> Path:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_prepare(args, parser) -> int:
    res = Resolver(args)
    min_count = int(res.get("min_count"))
    threshold = float(res.get("threshold"))
    seed = int(res.get("seed"))
    repeats = int(res.get("repeats"))
    if repeats < 1:
        parser.error(f"--repeats must be >= 1, got {repeats}")

    outdir = _outdir(args)
    layout = sniff_layout(args.input)
    ratings = load_ratings(args.input)
    kept = filter_sparse_users(ratings, min_count)
    removed_users = len({r.user_id for r in ratings}) - len({r.user_id for r in kept})
    dataset = to_implicit(kept, threshold)

    outputs = []
    split_seeds = []
    for r in range(repeats):
        split_seed = derived_seed(seed, r, 0)
        pair = split_half(dataset, split_seed)
        for part, name in ((pair.train, f"train_r{r}.csv"), (pair.test, f"test_r{r}.csv")):
            path = outdir / name
            write_ratings(path, part.to_raw_ratings(), layout)
            outputs.append(name)
        split_seeds.append(split_seed)

    idmap = {
        "users": dataset.user_ids,
        "items": dataset.item_ids,
        "threshold": threshold,
        "digest": dataset.idmap_digest(),
    }
    with open(outdir / "idmap.json", "w", encoding="utf-8") as fh:
        json.dump(idmap, fh)
        fh.write("\n")
    outputs.append("idmap.json")

    write_manifest(
        outdir,
        "prepare",
        res.resolved,
        inputs={"input": str(args.input), "input_sha256": file_digest(args.input)},
        outputs=outputs,
        extra={
            "split_seeds": split_seeds,
            "n_users": dataset.n_users,
            "n_items": dataset.n_items,
            "n_interactions": dataset.n_interactions,
            "removed_users": removed_users,
            "idmap_digest": dataset.idmap_digest(),
        },
    )
    print(
        f"prepared {dataset.n_users} users x {dataset.n_items} items "
        f"({dataset.n_interactions} interactions, {removed_users} users removed); "
        f"{repeats} split pair(s) in {outdir}"
    )
    return EXIT_OK


def _train_config(res: Resolver, parser) -> TrainConfig:
    smoothing_kind = res.get("smoothing")
    sigmoid_c = float(res.get("sigmoid_c"))
    algorithm = res.get("algorithm")
    if algorithm == "fast-relu" and smoothing_kind == "sigmoid":
        parser.error("--algorithm fast-relu requires --smoothing relu")
    smoothing = (
        Smoothing(kind="sigmoid", scale=sigmoid_c)
        if smoothing_kind == "sigmoid"
        else Smoothing(kind="relu")
    )
    lr = res.get("lr")
    return TrainConfig(
        n_factors=int(res.get("k")),
        top_n=int(res.get("top_n")),
        lr=None if lr is None else float(lr),
        reg=float(res.get("lambda", attr="reg")),
        batch_fraction=float(res.get("batch_frac")),
        max_iters=int(res.get("max_iters")),
        epsilon=float(res.get("epsilon")),
        seed=int(res.get("seed")),
        smoothing=smoothing,
        truncated=not bool(res.get("no_truncate")),
        negative_gain=bool(res.get("negative_gain")),
        algorithm=algorithm,
    )


def cmd_train(args, parser) -> int:
    res = Resolver(args)
    threshold = float(res.get("threshold"))
    config = _train_config(res, parser)

    outdir = _outdir(args)
    ratings = load_ratings(args.input)
    if not ratings:
        raise ValueError(f"no ratings in {args.input}")
    if args.idmap:
        with open(args.idmap, "r", encoding="utf-8") as fh:
            idmap = json.load(fh)
        dataset = to_implicit_with_maps(
            ratings, idmap["users"], idmap["items"], threshold
        )
    else:
        dataset = to_implicit(ratings, threshold)

    started = time.perf_counter()
    try:
        model, log = train(dataset, config)
    except DivergenceError as exc:
        records = getattr(exc, "records", []) or []
        if records:
            write_table(
                outdir / "training_log.csv",
                ["iteration", "loss", "param_delta", "seconds", "stop_reason"],
                [(r.iteration, r.loss, r.param_delta, r.seconds, "diverged")
                 for r in records],
            )
        raise
    elapsed = time.perf_counter() - started

    width = config.init_width if config.init_width is not None else init_width(config.n_factors)
    meta = {
        "n_users": dataset.n_users,
        "n_items": dataset.n_items,
        "n_factors": config.n_factors,
        "top_n": config.top_n,
        "smoothing": config.smoothing.kind,
        "sigmoid_c": config.smoothing.scale,
        "truncated": config.truncated,
        "negative_gain": config.negative_gain,
        "algorithm": config.algorithm,
        "lr": config.resolved_lr(),
        "reg": config.reg,
        "seed": config.seed,
        "init_width": width,
        "threshold": threshold,
        "user_ids": dataset.user_ids,
        "item_ids": dataset.item_ids,
        "idmap_digest": dataset.idmap_digest(),
        "stop_reason": log.stop_reason,
        "iterations": len(log.records),
    }
    save_checkpoint(outdir / "model.npz", model, meta)
    outputs = ["model.npz"]

    write_table(
        outdir / "training_log.csv",
        ["iteration", "loss", "param_delta", "seconds", "stop_reason"],
        log.rows(),
    )
    outputs.append("training_log.csv")
    if log.records:
        figures.save_training_curves(outdir / "training_curves.png", log)
        outputs.append("training_curves.png")

    write_manifest(
        outdir,
        "train",
        res.resolved,
        inputs={
            "input": str(args.input),
            "input_sha256": file_digest(args.input),
            "idmap": str(args.idmap) if args.idmap else None,
        },
        outputs=outputs,
        extra={
            "stop_reason": log.stop_reason,
            "iterations": len(log.records),
            "final_loss": log.records[-1].loss if log.records else None,
            "train_seconds": elapsed,
            "idmap_digest": dataset.idmap_digest(),
        },
    )
    final = f", final batch loss {log.records[-1].loss:.6f}" if log.records else ""
    print(
        f"trained {config.algorithm} on {dataset.n_users} users in "
        f"{len(log.records)} iteration(s) ({log.stop_reason}){final}; "
        f"checkpoint in {outdir}"
    )
    return EXIT_OK


def cmd_evaluate(args, parser) -> int:
    res = Resolver(args)
    cutoffs = parse_int_list(res.get("cutoffs"), "cutoff")

    outdir = _outdir(args)
    model, meta = load_checkpoint(args.model)
    ratings = load_ratings(args.input)
    if not ratings:
        raise ValueError(f"no ratings in {args.input}")
    user_index = {uid: u for u, uid in enumerate(meta["user_ids"])}
    item_index = {iid: i for i, iid in enumerate(meta["item_ids"])}
    groups = implicit_user_groups(
        ratings, user_index, item_index, float(meta["threshold"])
    )
    metrics = ndcg_report(model, groups, cutoffs)

    write_table(
        outdir / "metrics.csv",
        ["cutoff", "mean_ndcg", "n_users", "n_excluded"],
        metrics.rows(),
    )
    figures.save_split_metrics_plot(outdir / "metrics.png", metrics)
    write_manifest(
        outdir,
        "evaluate",
        res.resolved,
        inputs={
            "model": str(args.model),
            "model_sha256": file_digest(args.model),
            "input": str(args.input),
            "input_sha256": file_digest(args.input),
        },
        outputs=["metrics.csv", "metrics.png"],
        extra={
            "n_users": metrics.n_included,
            "n_excluded": metrics.n_excluded,
            "idmap_digest": meta.get("idmap_digest"),
        },
    )
    for n in cutoffs:
        print(f"ndcg@{n}: {metrics.means[n]:.6f}")
    print(
        f"averaged over {metrics.n_included} user(s), "
        f"{metrics.n_excluded} excluded (no relevant test item)"
    )
    return EXIT_OK


def cmd_ablation(args, parser) -> int:
    res = Resolver(args)
    min_count = int(res.get("min_count"))
    threshold = float(res.get("threshold"))
    repeats = int(res.get("repeats"))
    cutoffs = parse_int_list(res.get("cutoffs"), "cutoff")
    lr = res.get("lr")
    base = TrainConfig(
        n_factors=int(res.get("k")),
        top_n=int(res.get("top_n")),
        lr=None if lr is None else float(lr),
        reg=float(res.get("lambda", attr="reg")),
        batch_fraction=float(res.get("batch_frac")),
        max_iters=int(res.get("max_iters")),
        epsilon=float(res.get("epsilon")),
        seed=int(res.get("seed")),
    )

    outdir = _outdir(args)
    ratings = load_ratings(args.input)
    dataset = to_implicit(filter_sparse_users(ratings, min_count), threshold)

    started = time.perf_counter()
    report = run_ablation(dataset, base, repeats=repeats, cutoffs=cutoffs)
    elapsed = time.perf_counter() - started

    write_table(
        outdir / "ablation.csv",
        ["variant", "cutoff", "mean_ndcg", "std_ndcg"],
        [(name, n, f"{mean:.6f}", f"{std:.6f}")
         for name, n, mean, std in report.table_rows()],
    )
    split_rows = []
    for name, rep in report.reports.items():
        for split, metrics in enumerate(rep.per_split):
            for n in cutoffs:
                split_rows.append((name, split, n, f"{metrics.means[n]:.6f}"))
    write_table(
        outdir / "ablation_splits.csv",
        ["variant", "split", "cutoff", "ndcg"],
        split_rows,
    )
    figures.save_ablation_bars(outdir / "ablation.png", report)

    hero = "Top-N-Rank.ReLU"
    ordering = {
        other: report.splits_won(hero, other)
        for other in ("non-Top-N.ReLU", "Top-N-Rank.sgm")
    }
    write_manifest(
        outdir,
        "ablation",
        res.resolved,
        inputs={"input": str(args.input), "input_sha256": file_digest(args.input)},
        outputs=["ablation.csv", "ablation_splits.csv", "ablation.png"],
        extra={
            "repeats": repeats,
            "ablation_seconds": elapsed,
            "splits_won": ordering,
        },
    )
    for name, n, mean, std in report.table_rows():
        print(f"{name:18s} ndcg@{n:<2d} {mean:.4f} +/- {std:.4f}")
    for other, won in ordering.items():
        print(f"{hero} >= {other} on {won}/{repeats} split(s)")
    return EXIT_OK


def cmd_benchmark(args, parser) -> int:
    res = Resolver(args)
    sizes = parse_int_list(res.get("sizes"), "size")
    n_users = int(res.get("n_users"))
    k = int(res.get("k"))
    trials = int(res.get("trials"))
    seed = int(res.get("seed"))

    outdir = _outdir(args)
    started = time.perf_counter()
    rows = benchmark_scaling(
        sizes=sizes, n_users=n_users, n_factors=k, trials=trials, seed=seed
    )
    elapsed = time.perf_counter() - started

    write_table(
        outdir / "benchmark.csv",
        [
            "algorithm",
            "items_per_user",
            "median_seconds",
            "score_evals",
            "smooth_evals",
            "kvec_adds",
            "sort_comparisons",
            "total_ops",
        ],
        [
            (
                r.algorithm,
                r.items_per_user,
                f"{r.median_seconds:.6f}",
                r.counters.score_evals,
                r.counters.smooth_evals,
                r.counters.kvec_adds,
                r.counters.sort_comparisons,
                r.total_ops,
            )
            for r in rows
        ],
    )
    ratio_rows = []
    for algorithm in ("fast-relu", "generic"):
        for m_tilde, time_ratio, op_ratio in doubling_ratios(rows, algorithm):
            ratio_rows.append(
                (algorithm, m_tilde, f"{time_ratio:.3f}", f"{op_ratio:.3f}")
            )
    write_table(
        outdir / "benchmark_ratios.csv",
        ["algorithm", "items_per_user", "time_ratio", "ops_ratio"],
        ratio_rows,
    )
    figures.save_scaling_plot(outdir / "benchmark.png", rows)
    write_manifest(
        outdir,
        "benchmark",
        res.resolved,
        inputs={},
        outputs=["benchmark.csv", "benchmark_ratios.csv", "benchmark.png"],
        extra={"benchmark_seconds": elapsed},
    )
    for algorithm, m_tilde, time_ratio, op_ratio in ratio_rows:
        print(
            f"{algorithm:9s} {m_tilde:4d} items/user: time x{time_ratio}, "
            f"ops x{op_ratio} per doubling"
        )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
