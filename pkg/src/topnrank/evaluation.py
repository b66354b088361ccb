"""NDCG@N over held-out rated items and the repeated-split protocol.

Evaluation ranks only the items a user actually rated in the test half;
gains are 2^y - 1 with binary relevance, the discount is log(rank + 2) with
ranks starting at zero, and NDCG normalizes by the gain-descending ideal
ordering.  Users whose test half has no relevant item (ideal DCG zero) are
excluded from averages and counted.  The experiment driver repeats
split-train-evaluate with seeds derived from a single base seed, and the
ablation grid runs the four variants (truncated or not, rectifier or
sigmoid) against shared splits so each comparison changes one variable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import InteractionDataset, split_half
from .model import FactorModel
from .training import TrainConfig, train
from .objective import Smoothing

DEFAULT_CUTOFFS = (1, 3, 5, 10, 20)

# variant name -> (smoothing kind, truncated, algorithm)
ABLATION_VARIANTS = {
    "Top-N-Rank.ReLU": ("relu", True, "fast-relu"),
    "non-Top-N.ReLU": ("relu", False, "fast-relu"),
    "Top-N-Rank.sgm": ("sigmoid", True, "generic"),
    "non-Top-N.sgm": ("sigmoid", False, "generic"),
}


def derived_seed(*parts: int) -> int:
    """Stable child seed from integer parts (platform independent)."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def ndcg_at_n(scores, relevance, n: int, log_base: float = math.e) -> float | None:
    """NDCG at cutoff n over one user's rated test items.

    Ranking is by descending score with ties broken by ascending position
    (item index).  Returns None when the ideal DCG is zero, i.e. the user
    has no relevant item.  The log base cancels in the ratio; it is a
    parameter only so the invariance is testable.
    """
    if n < 1:
        raise ValueError(f"cutoff must be >= 1, got {n}")
    scores = np.asarray(scores, dtype=np.float64)
    gains = np.exp2(np.asarray(relevance, dtype=np.float64)) - 1.0
    order = np.lexsort((np.arange(scores.size), -scores))
    top = gains[order[:n]]
    ideal = np.sort(gains)[::-1][: top.size]
    discounts = np.log(np.arange(top.size) + 2.0) / math.log(log_base)
    idcg = float(np.sum(ideal / discounts))
    if idcg == 0.0:
        return None
    return float(np.sum(top / discounts)) / idcg


@dataclass
class SplitMetrics:
    """Per-cutoff NDCG means over the users of one split."""

    cutoffs: tuple[int, ...]
    means: dict[int, float]
    n_included: int
    n_excluded: int

    def rows(self) -> list[tuple]:
        return [
            (n, self.means[n], self.n_included, self.n_excluded)
            for n in self.cutoffs
        ]


def ndcg_report(model: FactorModel, per_user, cutoffs=DEFAULT_CUTOFFS) -> SplitMetrics:
    """Average NDCG over (user, items, relevance) triples.

    Exclusion is uniform across cutoffs: a user with at least one relevant
    item has positive ideal DCG at every cutoff.
    """
    cutoffs = tuple(cutoffs)
    sums = {n: 0.0 for n in cutoffs}
    included = 0
    excluded = 0
    for u, items, relevance in per_user:
        scores = model.scores(u, items)
        values = {n: ndcg_at_n(scores, relevance, n) for n in cutoffs}
        if any(v is None for v in values.values()):
            excluded += 1
            continue
        included += 1
        for n in cutoffs:
            sums[n] += values[n]
    if included == 0:
        raise ValueError("no user has a relevant test item; nothing to average")
    return SplitMetrics(
        cutoffs=cutoffs,
        means={n: sums[n] / included for n in cutoffs},
        n_included=included,
        n_excluded=excluded,
    )


def evaluate_model(
    model: FactorModel, test: InteractionDataset, cutoffs=DEFAULT_CUTOFFS
) -> SplitMetrics:
    """NDCG means over every user of a test split."""
    per_user = (
        (u, test.items[u], test.relevance[u]) for u in range(test.n_users)
    )
    return ndcg_report(model, per_user, cutoffs)


@dataclass
class ExperimentReport:
    """Aggregate of repeated split-train-evaluate runs."""

    cutoffs: tuple[int, ...]
    per_split: list[SplitMetrics]
    split_seeds: list[int]

    @property
    def repeats(self) -> int:
        return len(self.per_split)

    def grand_mean(self, n: int) -> float:
        return float(np.mean([m.means[n] for m in self.per_split]))

    def grand_std(self, n: int) -> float:
        values = [m.means[n] for m in self.per_split]
        if len(values) < 2:
            return 0.0
        return float(np.std(values, ddof=1))

    def rows(self) -> list[tuple]:
        return [
            (n, self.grand_mean(n), self.grand_std(n)) for n in self.cutoffs
        ]


def run_experiment(
    dataset: InteractionDataset,
    config: TrainConfig,
    repeats: int = 5,
    cutoffs=DEFAULT_CUTOFFS,
) -> ExperimentReport:
    """Repeat split-train-evaluate and aggregate.

    Split and training seeds for repeat r are derived from (config.seed, r)
    only, so two configs with the same seed see identical splits and
    initializations regardless of their other settings.
    """
    if repeats < 1:
        raise ValueError(f"repeats must be >= 1, got {repeats}")
    per_split: list[SplitMetrics] = []
    split_seeds: list[int] = []
    for r in range(repeats):
        split_seed = derived_seed(config.seed, r, 0)
        train_seed = derived_seed(config.seed, r, 1)
        pair = split_half(dataset, split_seed)
        model, _ = train(pair.train, config.with_overrides(seed=train_seed))
        per_split.append(evaluate_model(model, pair.test, cutoffs))
        split_seeds.append(split_seed)
    return ExperimentReport(
        cutoffs=tuple(cutoffs), per_split=per_split, split_seeds=split_seeds
    )


@dataclass
class AblationReport:
    """The four-variant grid evaluated against shared splits."""

    cutoffs: tuple[int, ...]
    reports: dict[str, ExperimentReport]

    def table_rows(self) -> list[tuple]:
        """(variant, cutoff, mean, std) in the grid's declared order."""
        out = []
        for name in ABLATION_VARIANTS:
            rep = self.reports[name]
            for n in self.cutoffs:
                out.append((name, n, rep.grand_mean(n), rep.grand_std(n)))
        return out

    def splits_won(self, hero: str, other: str) -> int:
        """Splits where hero's NDCG >= other's at a majority of cutoffs."""
        hero_rep = self.reports[hero]
        other_rep = self.reports[other]
        won = 0
        for hm, om in zip(hero_rep.per_split, other_rep.per_split):
            wins = sum(1 for n in self.cutoffs if hm.means[n] >= om.means[n])
            if wins * 2 > len(self.cutoffs):
                won += 1
        return won


def run_ablation(
    dataset: InteractionDataset,
    base: TrainConfig,
    repeats: int = 5,
    cutoffs=DEFAULT_CUTOFFS,
    lr_overrides: dict[str, float] | None = None,
) -> AblationReport:
    """Run all four variants with shared per-repeat splits.

    Variants reuse base's seed so repeat r of every variant trains on the
    identical split from the identical initialization; only smoothing and
    truncation vary.  lr_overrides maps variant name to an explicit learning
    rate; unlisted variants use their smoothing's default.
    """
    reports: dict[str, ExperimentReport] = {}
    for name, (kind, truncated, algorithm) in ABLATION_VARIANTS.items():
        smoothing = Smoothing(kind=kind) if kind == "sigmoid" else Smoothing(kind="relu")
        lr = (lr_overrides or {}).get(name)
        config = base.with_overrides(
            smoothing=smoothing,
            truncated=truncated,
            algorithm=algorithm,
            lr=lr if lr is not None else base.lr,
        )
        reports[name] = run_experiment(dataset, config, repeats, cutoffs)
    return AblationReport(cutoffs=tuple(cutoffs), reports=reports)
