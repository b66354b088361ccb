"""Synthetic rating corpora: planted low-rank preference data and controlled
benchmark datasets.

Planted data draws user and item latent vectors, scores every pair, adds
noise, and converts each user's observed scores to star ratings by per-user
quantile binning so a configurable fraction lands at or above the relevance
threshold.  Benchmark data fixes the exact number of observed items per user
so per-iteration trainer cost depends on history length alone.
"""

from __future__ import annotations

import numpy as np

from .data import InteractionDataset, RawRating, write_ratings

BASE_TIMESTAMP = 978_300_000

RELEVANT_STARS = (5.0, 4.5, 4.0)
IRRELEVANT_STARS = (3.5, 3.0, 2.5, 2.0, 1.5, 1.0, 0.5)


def _assemble(
    n_users: int, n_items: int, items: list[np.ndarray], stars: list[np.ndarray]
) -> InteractionDataset:
    """Build an InteractionDataset from per-user item indices and star ratings."""
    relevance = [(s >= 4.0).astype(np.int8) for s in stars]
    weights = [np.where(r == 1, 1.0, -1.0) for r in relevance]
    timestamps = []
    tick = BASE_TIMESTAMP
    for its in items:
        timestamps.append(np.arange(tick, tick + its.size, dtype=np.int64))
        tick += its.size
    return InteractionDataset(
        n_users=n_users,
        n_items=n_items,
        user_ids=[str(u + 1) for u in range(n_users)],
        item_ids=[str(i + 1) for i in range(n_items)],
        items=items,
        ratings=[s.astype(np.float64) for s in stars],
        weights=weights,
        relevance=relevance,
        timestamps=timestamps,
    )


def _stars_from_order(h: int, n_relevant: int, order_desc: np.ndarray) -> np.ndarray:
    """Assign stars by preference position: the first n_relevant items of
    order_desc get >= 4 stars (graded), the rest < 4 (graded)."""
    stars = np.empty(h, dtype=np.float64)
    for pos, idx in enumerate(order_desc):
        if pos < n_relevant:
            tier = min(2, pos * len(RELEVANT_STARS) // max(1, n_relevant))
            stars[idx] = RELEVANT_STARS[tier]
        else:
            rest = h - n_relevant
            tier = min(
                len(IRRELEVANT_STARS) - 1,
                (pos - n_relevant) * len(IRRELEVANT_STARS) // max(1, rest),
            )
            stars[idx] = IRRELEVANT_STARS[tier]
    return stars


def planted_dataset(
    n_users: int = 300,
    n_items: int = 500,
    latent_dim: int = 6,
    history: tuple[int, int] = (80, 160),
    relevant_fraction: float | tuple[float, float] = 0.4,
    noise: float = 0.3,
    popularity: float = 0.0,
    label_noise: float = 0.0,
    quality: float = 0.0,
    seed=0,
) -> tuple[InteractionDataset, np.ndarray]:
    """Low-rank preference data with per-user quantile star binning.

    Returns the dataset and the noise-free true score matrix (n_users x
    n_items) for oracle comparisons.  Each user's observed items are a
    subset of the catalog with history length drawn from the given inclusive
    range.  relevant_fraction may be a scalar or a (lo, hi) range sampled
    per user, mimicking harsh and generous raters.  popularity > 0 skews
    item exposure toward a power-law head (probability proportional to
    1/rank^popularity).  label_noise is the fraction of each user's relevant
    slots swapped with random irrelevant slots, mimicking junk interactions
    (misclicks, gifts) that carry no preference signal.  quality > 0 adds a
    right-skewed per-item bias so a minority of items are near-universally
    liked, the way blockbusters behave in rating corpora.
    """
    rng = np.random.default_rng(seed)
    lo, hi = history
    if not (1 <= lo <= hi <= n_items):
        raise ValueError(f"history range {history} invalid for {n_items} items")
    try:
        frac_lo, frac_hi = relevant_fraction
    except TypeError:
        frac_lo = frac_hi = float(relevant_fraction)
    user_vecs = rng.normal(size=(n_users, latent_dim))
    item_vecs = rng.normal(size=(n_items, latent_dim))
    true_scores = (user_vecs @ item_vecs.T) / np.sqrt(latent_dim)
    if quality > 0:
        true_scores = true_scores + quality * (rng.exponential(size=n_items) - 1.0)

    exposure = None
    if popularity > 0:
        weights = (1.0 + rng.permutation(n_items)) ** -popularity
        exposure = weights / weights.sum()

    items: list[np.ndarray] = []
    stars: list[np.ndarray] = []
    for u in range(n_users):
        h = int(rng.integers(lo, hi + 1))
        observed = np.sort(rng.choice(n_items, size=h, replace=False, p=exposure))
        noisy = true_scores[u, observed] + noise * rng.normal(size=h)
        order_desc = np.argsort(-noisy, kind="stable")
        frac = rng.uniform(frac_lo, frac_hi)
        n_rel = max(1, round(frac * h))
        if label_noise > 0 and n_rel < h:
            n_swap = min(round(label_noise * n_rel), h - n_rel)
            if n_swap > 0:
                rel_pick = rng.choice(n_rel, size=n_swap, replace=False)
                irr_pick = n_rel + rng.choice(h - n_rel, size=n_swap, replace=False)
                order_desc = order_desc.copy()
                tmp = order_desc[rel_pick].copy()
                order_desc[rel_pick] = order_desc[irr_pick]
                order_desc[irr_pick] = tmp
        items.append(observed.astype(np.int64))
        stars.append(_stars_from_order(h, n_rel, order_desc))
    return _assemble(n_users, n_items, items, stars), true_scores


def toy_dataset(seed=0) -> tuple[InteractionDataset, np.ndarray]:
    """The 20-user x 30-item planted low-rank toy; every user rates every item."""
    return planted_dataset(
        n_users=20,
        n_items=30,
        latent_dim=3,
        history=(30, 30),
        relevant_fraction=0.4,
        noise=0.2,
        seed=seed,
    )


def uniform_dataset(
    n_users: int,
    n_items: int,
    items_per_user: int,
    seed=0,
    relevant_fraction: float = 0.5,
) -> InteractionDataset:
    """Every user rates exactly items_per_user items; relevance is i.i.d.

    The controlled-history corpus for scaling benchmarks.
    """
    if not (1 <= items_per_user <= n_items):
        raise ValueError(
            f"items_per_user {items_per_user} invalid for {n_items} items"
        )
    rng = np.random.default_rng(seed)
    items: list[np.ndarray] = []
    stars: list[np.ndarray] = []
    for _ in range(n_users):
        observed = np.sort(rng.choice(n_items, size=items_per_user, replace=False))
        relevant = rng.random(items_per_user) < relevant_fraction
        s = np.where(
            relevant,
            rng.choice(RELEVANT_STARS, size=items_per_user),
            rng.choice(IRRELEVANT_STARS, size=items_per_user),
        )
        items.append(observed.astype(np.int64))
        stars.append(s)
    return _assemble(n_users, n_items, items, stars)


def random_dataset(
    n_users: int,
    n_items: int,
    max_items: int,
    seed=0,
    min_items: int = 1,
    relevant_fraction: float = 0.5,
) -> InteractionDataset:
    """Small irregular dataset for property and equivalence tests."""
    rng = np.random.default_rng(seed)
    items: list[np.ndarray] = []
    stars: list[np.ndarray] = []
    for _ in range(n_users):
        h = int(rng.integers(min_items, max_items + 1))
        observed = np.sort(rng.choice(n_items, size=h, replace=False))
        relevant = rng.random(h) < relevant_fraction
        s = np.where(
            relevant,
            rng.choice(RELEVANT_STARS, size=h),
            rng.choice(IRRELEVANT_STARS, size=h),
        )
        items.append(observed.astype(np.int64))
        stars.append(s)
    return _assemble(n_users, n_items, items, stars)


def write_planted_file(path, **kwargs) -> InteractionDataset:
    """Write a planted corpus to a ratings file in the default CSV layout."""
    dataset, _ = planted_dataset(**kwargs)
    write_ratings(path, dataset.to_raw_ratings())
    return dataset
