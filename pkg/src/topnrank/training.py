"""Trainers: the sorted linear-time rectifier path and the shared SGD driver.

The rectifier's one-sidedness means only items scored above item i contribute
to its smoothed rank, so after sorting a user's observed items by descending
score every rank and every gradient inner sum becomes a prefix-sum lookup:
R_i = Sf_{t_i} - t_i * f_i with t_i the number of strictly higher-scored
items, and the user-gradient inner sum is the matching factor-row prefix.
That turns the generic trainer's quadratic per-user work into O(k*m) plus a
sort.  Both trainers share the driver loop, mini-batch sampling and the
sum-of-squared-parameter-change stopping rule.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import InteractionDataset
from .model import FactorModel, init_model
from .objective import (
    DivergenceError,
    Objective,
    OpCounters,
    Smoothing,
    loss_and_gradient,
    sgd_step_generic,
)

ALGORITHMS = ("generic", "fast-relu")

# per-smoothing step sizes used when TrainConfig.lr is None; smoothing kinds
# have different gradient scales, so each carries its own default
DEFAULT_LEARNING_RATES = {"relu": 0.01, "sigmoid": 0.05}


@dataclass(frozen=True)
class TrainConfig:
    """All hyperparameters of a training run."""

    n_factors: int = 10
    top_n: int = 20
    lr: float | None = None
    reg: float = 0.1
    batch_fraction: float = 0.10
    max_iters: int = 30
    epsilon: float = 0.1
    seed: int = 0
    smoothing: Smoothing = field(default_factory=Smoothing)
    truncated: bool = True
    negative_gain: bool = False
    algorithm: str = "fast-relu"
    init_width: float | None = None

    def __post_init__(self) -> None:
        if self.n_factors < 1:
            raise ValueError(f"n_factors must be >= 1, got {self.n_factors}")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(
                f"unknown algorithm {self.algorithm!r}; expected one of {ALGORITHMS}"
            )
        if self.algorithm == "fast-relu" and self.smoothing.kind != "relu":
            raise ValueError("algorithm fast-relu requires relu smoothing")
        if not (0.0 < self.batch_fraction <= 1.0):
            raise ValueError(
                f"batch_fraction must be in (0, 1], got {self.batch_fraction}"
            )
        if self.max_iters < 0:
            raise ValueError(f"max_iters must be >= 0, got {self.max_iters}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.lr is not None and self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        return DEFAULT_LEARNING_RATES[self.smoothing.kind]

    def objective(self) -> Objective:
        return Objective(
            top_n=self.top_n,
            reg=self.reg,
            smoothing=self.smoothing,
            truncated=self.truncated,
            negative_gain=self.negative_gain,
        )

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


@dataclass
class SortedUserView:
    """One user's observed items sorted by descending score, with prefix sums.

    order maps sorted position -> position in the user's item list; ties in
    score keep ascending item order.  group_start[p] is the index of the
    first member of p's tie group, i.e. the count of strictly higher-scored
    items.  prefix_scores[i] and prefix_factors[i] sum the first i sorted
    scores / item-factor rows (length m+1, leading zero).
    """

    order: np.ndarray
    scores: np.ndarray
    factors: np.ndarray
    group_start: np.ndarray
    prefix_scores: np.ndarray
    prefix_factors: np.ndarray


def build_sorted_view(scores: np.ndarray, factors: np.ndarray) -> SortedUserView:
    m = scores.size
    order = np.lexsort((np.arange(m), -scores))
    fs = scores[order]
    rows = factors[order]
    new_group = np.empty(m, dtype=bool)
    new_group[0] = True
    new_group[1:] = fs[1:] < fs[:-1]
    group_start = np.maximum.accumulate(np.where(new_group, np.arange(m), 0))
    prefix_scores = np.concatenate(([0.0], np.cumsum(fs)))
    prefix_factors = np.vstack([np.zeros((1, rows.shape[1])), np.cumsum(rows, axis=0)])
    return SortedUserView(
        order=order,
        scores=fs,
        factors=rows,
        group_start=group_start,
        prefix_scores=prefix_scores,
        prefix_factors=prefix_factors,
    )


def fast_smoothed_ranks(view: SortedUserView) -> np.ndarray:
    """Rectifier smoothed ranks in sorted order, constant time per item.

    Only the t strictly higher-scored items contribute, each by its score
    difference, so R = Sf_t - t * f.  Tied predecessors add zero and are
    excluded via the group start.
    """
    t = view.group_start
    return view.prefix_scores[t] - t * view.scores


def fast_user_gradient(view: SortedUserView, coeffs: np.ndarray) -> np.ndarray:
    """Data term of the user-row gradient from prefix factor sums.

    Per sorted item p the rank derivative w.r.t. the user row is
    sum over strictly higher items of (theta_j - theta_p), i.e.
    St_{t_p} - t_p * theta_p; coeffs holds each item's d(loss)/d(rank).
    """
    t = view.group_start
    return view.prefix_factors[t].T @ coeffs - view.factors.T @ (coeffs * t)


def sgd_step_fast(
    model: FactorModel,
    dataset: InteractionDataset,
    users,
    objective: Objective,
    lr: float,
    counters: OpCounters | None = None,
) -> FactorModel:
    """One mini-batch pass of the sorted rectifier trainer.

    Mirrors the generic trainer's update ordering exactly (sequential users;
    user row first, then item rows against re-sorted scores), so the two
    produce the same parameters up to floating-point roundoff.  Per-user
    cost is O(k*m + m log m).  Updates the model in place.
    """
    if objective.smoothing.kind != "relu":
        raise ValueError("fast trainer requires relu smoothing")
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for u in users:
        _fast_user_pass(model, dataset, int(u), objective, lr, counters)
    return model


def _fast_user_pass(model, dataset, u, objective, lr, counters):
    idx = dataset.items[u]
    m = idx.size
    gains = objective.gains(dataset.weights[u], dataset.relevance[u])
    theta_u = model.user_factors[u].copy()
    rows = model.item_factors[idx]

    # phase 1: user row
    f = rows @ theta_u
    _check_scores(f, u)
    view = build_sorted_view(f, rows)
    ranks = fast_smoothed_ranks(view)
    coeffs = objective.rank_coefficient(ranks, gains[view.order])
    grad_u = fast_user_gradient(view, coeffs)
    if objective.reg:
        grad_u += (2.0 * objective.reg) * theta_u
    theta_u -= lr * grad_u
    model.user_factors[u] = theta_u

    # phase 2: item rows, re-sorted against the updated user row
    f = rows @ theta_u
    _check_scores(f, u)
    view = build_sorted_view(f, rows)
    ranks = fast_smoothed_ranks(view)
    coeffs = objective.rank_coefficient(ranks, gains[view.order])
    # own-rank derivative w.r.t. the item row is -t * theta_u
    scale = lr * (coeffs * view.group_start)
    targets = idx[view.order]
    old = model.item_factors[targets]
    model.item_factors[targets] = (
        old - (2.0 * lr * objective.reg) * old + scale[:, None] * theta_u
    )

    if counters is not None:
        log_m = int(math.ceil(math.log2(m))) if m > 1 else 0
        counters.score_evals += 2 * m
        counters.sort_comparisons += 2 * m * log_m
        counters.kvec_adds += 4 * m  # prefix builds plus gradient and updates
        counters.users_processed += 1


def _check_scores(f: np.ndarray, user: int) -> None:
    if not np.all(np.isfinite(f)) or (f.size and np.max(np.abs(f)) > 1.0e6):
        raise DivergenceError(user)


def sgd_step(
    model: FactorModel,
    dataset: InteractionDataset,
    users,
    objective: Objective,
    lr: float,
    algorithm: str,
    counters: OpCounters | None = None,
) -> FactorModel:
    if algorithm == "generic":
        return sgd_step_generic(model, dataset, users, objective, lr, counters)
    if algorithm == "fast-relu":
        return sgd_step_fast(model, dataset, users, objective, lr, counters)
    raise ValueError(f"unknown algorithm {algorithm!r}")


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    param_delta: float
    seconds: float


@dataclass
class TrainingLog:
    records: list[IterationRecord]
    stop_reason: str
    counters: OpCounters

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    def rows(self) -> list[tuple]:
        return [
            (r.iteration, r.loss, r.param_delta, r.seconds, self.stop_reason)
            for r in self.records
        ]


def train(
    dataset: InteractionDataset, config: TrainConfig
) -> tuple[FactorModel, TrainingLog]:
    """Mini-batch SGD until the parameter change falls below epsilon or the
    iteration budget runs out.

    Each iteration draws ceil(batch_fraction * n) users without replacement,
    logs the pre-update batch loss, runs one step, and measures the summed
    squared parameter change over the touched rows (untouched rows cannot
    change).  Deterministic given config.seed.  Raises DivergenceError with
    the completed records attached when scores blow up.
    """
    if dataset.n_users < 1:
        raise ValueError("dataset has no users")
    objective = config.objective()
    lr = config.resolved_lr()
    init_ss, batch_ss = np.random.SeedSequence(config.seed).spawn(2)
    model = init_model(
        dataset.n_users,
        dataset.n_items,
        config.n_factors,
        np.random.default_rng(init_ss),
        width=config.init_width,
    )
    batch_rng = np.random.default_rng(batch_ss)
    batch_size = min(
        dataset.n_users, max(1, math.ceil(config.batch_fraction * dataset.n_users))
    )

    counters = OpCounters()
    records: list[IterationRecord] = []
    stop_reason = "max_iters"
    for iteration in range(1, config.max_iters + 1):
        batch = batch_rng.choice(dataset.n_users, size=batch_size, replace=False)
        touched_items = np.unique(np.concatenate([dataset.items[u] for u in batch]))
        try:
            loss = loss_and_gradient(model, dataset, batch, objective).loss
            users_before = model.user_factors[batch].copy()
            items_before = model.item_factors[touched_items].copy()
            started = time.perf_counter()
            sgd_step(model, dataset, batch, objective, lr, config.algorithm, counters)
            seconds = time.perf_counter() - started
        except DivergenceError as exc:
            exc.iteration = iteration
            exc.records = records
            raise
        du = model.user_factors[batch] - users_before
        di = model.item_factors[touched_items] - items_before
        delta = float(np.sum(du * du) + np.sum(di * di))
        records.append(IterationRecord(iteration, loss, delta, seconds))
        if delta < config.epsilon:
            stop_reason = "converged"
            break

    return model, TrainingLog(records=records, stop_reason=stop_reason, counters=counters)


@dataclass
class BenchmarkRow:
    algorithm: str
    items_per_user: int
    median_seconds: float
    counters: OpCounters

    @property
    def total_ops(self) -> int:
        return self.counters.total()


def benchmark_scaling(
    sizes=(100, 200, 400, 800),
    n_users: int = 10,
    n_factors: int = 10,
    trials: int = 3,
    seed: int = 0,
    lr: float = 1.0e-4,
) -> list[BenchmarkRow]:
    """Per-iteration cost of both trainers at growing history length.

    Every synthetic user rates exactly `sizes[i]` items and every iteration
    processes the full fixed batch, so per-iteration cost isolates the
    dependence on history length.  Times are medians over `trials` bare
    steps (no loss evaluation inside the timed region); one untimed warm-up
    step runs first and the collector is paused while timing, since the
    smallest sizes finish in milliseconds and a single pause would swamp
    them.  Counters are taken from the first timed step.
    """
    import gc

    from . import synthetic

    objective = Objective(smoothing=Smoothing(kind="relu"))
    rows: list[BenchmarkRow] = []
    root = np.random.SeedSequence(seed)
    for size_seed, m_tilde in zip(root.spawn(len(sizes)), sizes):
        data_ss, init_ss = size_seed.spawn(2)
        dataset = synthetic.uniform_dataset(
            n_users=n_users,
            n_items=2 * m_tilde,
            items_per_user=m_tilde,
            seed=data_ss,
        )
        for algorithm in ("fast-relu", "generic"):
            model = init_model(
                dataset.n_users,
                dataset.n_items,
                n_factors,
                np.random.default_rng(init_ss),
            )
            users = np.arange(dataset.n_users)
            sgd_step(model, dataset, users, objective, lr, algorithm)
            times = []
            first_counters: OpCounters | None = None
            gc_was_enabled = gc.isenabled()
            gc.collect()
            gc.disable()
            try:
                for trial in range(trials):
                    counters = OpCounters()
                    started = time.perf_counter()
                    sgd_step(model, dataset, users, objective, lr, algorithm, counters)
                    times.append(time.perf_counter() - started)
                    if first_counters is None:
                        first_counters = counters
            finally:
                if gc_was_enabled:
                    gc.enable()
            rows.append(
                BenchmarkRow(
                    algorithm=algorithm,
                    items_per_user=m_tilde,
                    median_seconds=float(np.median(times)),
                    counters=first_counters,
                )
            )
    return rows


def doubling_ratios(rows: list[BenchmarkRow], algorithm: str) -> list[tuple[int, float, float]]:
    """(m, time ratio, counter ratio) for each doubling step of one algorithm."""
    mine = sorted(
        (r for r in rows if r.algorithm == algorithm), key=lambda r: r.items_per_user
    )
    out = []
    for prev, cur in zip(mine, mine[1:]):
        if cur.items_per_user != 2 * prev.items_per_user:
            continue
        out.append(
            (
                cur.items_per_user,
                cur.median_seconds / prev.median_seconds,
                cur.total_ops / prev.total_ops,
            )
        )
    return out
