"""Rating ingestion, implicit-feedback conversion and per-user train/test splits.

The pipeline mirrors the usual implicit-feedback protocol: load a delimited
ratings file, drop users with too few ratings, convert star ratings to
(weight, relevance) pairs, and split each user's interactions into random
halves.  All downstream code works on dense user/item indices; the raw ids
are kept in bidirectional maps so splits can be re-emitted in the original
file layout.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_RATING_BOUNDS = (0.5, 5.0)
DEFAULT_MIN_COUNT = 10
DEFAULT_THRESHOLD = 4.0


class RatingsParseError(ValueError):
    """Malformed ratings input (bad row, out-of-range rating, ...)."""


class DuplicateRatingError(RatingsParseError):
    """Same (user, item) pair occurs more than once."""


@dataclass(frozen=True)
class RawRating:
    """One data row of a ratings file.  Ids are opaque strings."""

    user_id: str
    item_id: str
    rating: float
    timestamp: int | None = None


@dataclass(frozen=True)
class TableLayout:
    """Delimiter/header of a ratings file, remembered for re-emission."""

    delimiter: str = ","
    header: tuple[str, ...] | None = ("userId", "movieId", "rating", "timestamp")
    has_timestamp: bool = True


def sniff_layout(path: str | Path) -> TableLayout:
    """Detect delimiter, header presence and column count of a ratings file."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if not first:
        return TableLayout()
    delimiter = "\t" if "\t" in first else ","
    fields = [f.strip() for f in first.rstrip("\n").split(delimiter)]
    header: tuple[str, ...] | None = None
    # header row <=> third column does not parse as a number
    if len(fields) >= 3:
        try:
            float(fields[2])
        except ValueError:
            header = tuple(fields)
    return TableLayout(
        delimiter=delimiter,
        header=header,
        has_timestamp=len(fields) >= 4,
    )


def load_ratings(
    path: str | Path,
    *,
    delimiter: str | None = None,
    has_header: bool | None = None,
    rating_bounds: tuple[float, float] = DEFAULT_RATING_BOUNDS,
) -> list[RawRating]:
    """Load a delimited ratings file into RawRating records, row order preserved.

    Columns are (user, item, rating[, timestamp]).  Delimiter (comma or tab)
    and header presence are sniffed from the first line unless given.  Raises
    RatingsParseError with the offending line number on malformed rows or
    out-of-range ratings, and DuplicateRatingError when a (user, item) pair
    repeats (both line numbers reported).
    """
    layout = sniff_layout(path)
    if delimiter is None:
        delimiter = layout.delimiter
    skip_header = layout.header is not None if has_header is None else has_header
    lo, hi = rating_bounds

    ratings: list[RawRating] = []
    seen: dict[tuple[str, str], int] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        for lineno, row in enumerate(reader, start=1):
            if lineno == 1 and skip_header:
                continue
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # blank line
            if len(row) < 3:
                raise RatingsParseError(
                    f"{path}:{lineno}: expected at least 3 columns, got {len(row)}"
                )
            user_id, item_id = row[0].strip(), row[1].strip()
            if not user_id or not item_id:
                raise RatingsParseError(f"{path}:{lineno}: empty user or item id")
            try:
                rating = float(row[2])
            except ValueError as exc:
                raise RatingsParseError(
                    f"{path}:{lineno}: rating {row[2]!r} is not a number"
                ) from exc
            if not np.isfinite(rating) or not (lo <= rating <= hi):
                raise RatingsParseError(
                    f"{path}:{lineno}: rating {rating} out of range [{lo}, {hi}]"
                )
            timestamp: int | None = None
            if len(row) >= 4 and row[3].strip():
                try:
                    timestamp = int(float(row[3]))
                except ValueError as exc:
                    raise RatingsParseError(
                        f"{path}:{lineno}: timestamp {row[3]!r} is not an integer"
                    ) from exc
            key = (user_id, item_id)
            if key in seen:
                raise DuplicateRatingError(
                    f"{path}: duplicate (user={user_id}, item={item_id}) "
                    f"at lines {seen[key]} and {lineno}"
                )
            seen[key] = lineno
            ratings.append(RawRating(user_id, item_id, rating, timestamp))
    return ratings


def filter_sparse_users(
    ratings: list[RawRating], min_count: int = DEFAULT_MIN_COUNT
) -> list[RawRating]:
    """Keep only ratings of users with at least ``min_count`` ratings."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts = Counter(r.user_id for r in ratings)
    return [r for r in ratings if counts[r.user_id] >= min_count]


@dataclass
class InteractionDataset:
    """Per-user interaction lists over dense indices, plus raw-id maps.

    ``items[u]`` holds user u's item indices sorted ascending; ``ratings``,
    ``weights``, ``relevance`` and ``timestamps`` are parallel arrays.
    Instances are treated as immutable once built.
    """

    n_users: int
    n_items: int
    user_ids: list[str]
    item_ids: list[str]
    items: list[np.ndarray]
    ratings: list[np.ndarray]
    weights: list[np.ndarray]
    relevance: list[np.ndarray]
    timestamps: list[np.ndarray | None] = field(default_factory=list)
    user_index: dict[str, int] = field(default_factory=dict)
    item_index: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.user_index:
            self.user_index = {uid: u for u, uid in enumerate(self.user_ids)}
        if not self.item_index:
            self.item_index = {iid: i for i, iid in enumerate(self.item_ids)}
        if not self.timestamps:
            self.timestamps = [None] * self.n_users
        self._validate()

    def _validate(self) -> None:
        if len(self.items) != self.n_users:
            raise ValueError("per-user lists do not match n_users")
        for u in range(self.n_users):
            its = self.items[u]
            if its.size == 0:
                raise ValueError(f"user index {u} has no interactions")
            if its.size and (its.min() < 0 or its.max() >= self.n_items):
                raise ValueError(f"user index {u}: item index out of range")
            if np.any(np.diff(its) <= 0):
                raise ValueError(
                    f"user index {u}: items must be strictly increasing "
                    "(sorted, no duplicates)"
                )

    @property
    def n_interactions(self) -> int:
        return sum(int(a.size) for a in self.items)

    def mean_items_per_user(self) -> float:
        return self.n_interactions / self.n_users if self.n_users else 0.0

    def idmap_digest(self) -> str:
        """sha256 over the ordered raw id lists; identifies the index space."""
        payload = json.dumps(
            {"users": self.user_ids, "items": self.item_ids}
        ).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()

    def replace_interactions(
        self, keep: list[np.ndarray]
    ) -> "InteractionDataset":
        """New dataset with per-user subsets ``keep`` (positional masks/indices),
        sharing this dataset's id maps and index space."""
        items, ratings, weights, relevance, timestamps = [], [], [], [], []
        for u in range(self.n_users):
            sel = keep[u]
            items.append(self.items[u][sel])
            ratings.append(self.ratings[u][sel])
            weights.append(self.weights[u][sel])
            relevance.append(self.relevance[u][sel])
            ts = self.timestamps[u]
            timestamps.append(None if ts is None else ts[sel])
        return InteractionDataset(
            n_users=self.n_users,
            n_items=self.n_items,
            user_ids=self.user_ids,
            item_ids=self.item_ids,
            items=items,
            ratings=ratings,
            weights=weights,
            relevance=relevance,
            timestamps=timestamps,
            user_index=self.user_index,
            item_index=self.item_index,
        )

    def to_raw_ratings(self) -> list[RawRating]:
        """Rows in (user, then item-index) order, with original ratings."""
        out: list[RawRating] = []
        for u in range(self.n_users):
            ts = self.timestamps[u]
            for pos, i in enumerate(self.items[u]):
                out.append(
                    RawRating(
                        user_id=self.user_ids[u],
                        item_id=self.item_ids[int(i)],
                        rating=float(self.ratings[u][pos]),
                        timestamp=None if ts is None else int(ts[pos]),
                    )
                )
        return out


def to_implicit(
    ratings: list[RawRating], threshold: float = DEFAULT_THRESHOLD
) -> InteractionDataset:
    """Convert ratings to implicit feedback: w=+1, y=1 iff rating >= threshold,
    else w=-1, y=0.  Dense indices are assigned in first-appearance order."""
    user_ids: list[str] = []
    item_ids: list[str] = []
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    per_user: dict[int, list[tuple[int, float, int | None]]] = {}

    seen: set[tuple[int, int]] = set()
    for r in ratings:
        if r.user_id not in user_index:
            user_index[r.user_id] = len(user_ids)
            user_ids.append(r.user_id)
        if r.item_id not in item_index:
            item_index[r.item_id] = len(item_ids)
            item_ids.append(r.item_id)
        u, i = user_index[r.user_id], item_index[r.item_id]
        if (u, i) in seen:
            raise DuplicateRatingError(
                f"duplicate (user={r.user_id}, item={r.item_id}) after filtering"
            )
        seen.add((u, i))
        per_user.setdefault(u, []).append((i, r.rating, r.timestamp))

    items, rates, weights, relevance, timestamps = [], [], [], [], []
    for u in range(len(user_ids)):
        rows = sorted(per_user[u], key=lambda t: t[0])
        idx = np.array([t[0] for t in rows], dtype=np.int64)
        val = np.array([t[1] for t in rows], dtype=np.float64)
        rel = (val >= threshold).astype(np.int8)
        w = np.where(rel == 1, 1.0, -1.0)
        ts_vals = [t[2] for t in rows]
        ts = (
            None
            if any(t is None for t in ts_vals)
            else np.array(ts_vals, dtype=np.int64)
        )
        items.append(idx)
        rates.append(val)
        weights.append(w)
        relevance.append(rel)
        timestamps.append(ts)

    return InteractionDataset(
        n_users=len(user_ids),
        n_items=len(item_ids),
        user_ids=user_ids,
        item_ids=item_ids,
        items=items,
        ratings=rates,
        weights=weights,
        relevance=relevance,
        timestamps=timestamps,
        user_index=user_index,
        item_index=item_index,
    )


def to_implicit_with_maps(
    ratings: list[RawRating],
    user_ids: list[str],
    item_ids: list[str],
    threshold: float = DEFAULT_THRESHOLD,
) -> InteractionDataset:
    """Implicit conversion against a fixed, externally supplied id space.

    Used when the index space is dictated by an earlier run (a prepare step
    or a checkpoint).  Every rating's ids must exist in the maps, and every
    mapped user must appear in `ratings` (a user row needs at least one
    interaction).
    """
    user_index = {uid: u for u, uid in enumerate(user_ids)}
    item_index = {iid: i for i, iid in enumerate(item_ids)}
    groups = _group_mapped(ratings, user_index, item_index)
    missing = [uid for u, uid in enumerate(user_ids) if u not in groups]
    if missing:
        raise ValueError(
            f"{len(missing)} mapped user(s) have no ratings in this file "
            f"(first: {missing[0]!r})"
        )
    items, rates, weights, relevance, timestamps = [], [], [], [], []
    for u in range(len(user_ids)):
        rows = sorted(groups[u], key=lambda t: t[0])
        idx = np.array([t[0] for t in rows], dtype=np.int64)
        val = np.array([t[1] for t in rows], dtype=np.float64)
        rel = (val >= threshold).astype(np.int8)
        ts_vals = [t[2] for t in rows]
        ts = (
            None
            if any(t is None for t in ts_vals)
            else np.array(ts_vals, dtype=np.int64)
        )
        items.append(idx)
        rates.append(val)
        weights.append(np.where(rel == 1, 1.0, -1.0))
        relevance.append(rel)
        timestamps.append(ts)
    return InteractionDataset(
        n_users=len(user_ids),
        n_items=len(item_ids),
        user_ids=list(user_ids),
        item_ids=list(item_ids),
        items=items,
        ratings=rates,
        weights=weights,
        relevance=relevance,
        timestamps=timestamps,
        user_index=user_index,
        item_index=item_index,
    )


def implicit_user_groups(
    ratings: list[RawRating],
    user_index: dict[str, int],
    item_index: dict[str, int],
    threshold: float = DEFAULT_THRESHOLD,
) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """Per-user (dense user, item indices, relevance) for evaluation.

    Ids are mapped through the given index maps; users absent from
    `ratings` are simply not returned.  Unknown ids are an id-space
    mismatch error.
    """
    groups = _group_mapped(ratings, user_index, item_index)
    out = []
    for u in sorted(groups):
        rows = sorted(groups[u], key=lambda t: t[0])
        idx = np.array([t[0] for t in rows], dtype=np.int64)
        val = np.array([t[1] for t in rows], dtype=np.float64)
        out.append((u, idx, (val >= threshold).astype(np.int8)))
    return out


def _group_mapped(
    ratings: list[RawRating],
    user_index: dict[str, int],
    item_index: dict[str, int],
) -> dict[int, list[tuple[int, float, int | None]]]:
    groups: dict[int, list[tuple[int, float, int | None]]] = {}
    seen: set[tuple[int, int]] = set()
    for r in ratings:
        u = user_index.get(r.user_id)
        if u is None:
            raise ValueError(f"user id {r.user_id!r} not in the given id space")
        i = item_index.get(r.item_id)
        if i is None:
            raise ValueError(f"item id {r.item_id!r} not in the given id space")
        if (u, i) in seen:
            raise DuplicateRatingError(
                f"duplicate (user={r.user_id}, item={r.item_id})"
            )
        seen.add((u, i))
        groups.setdefault(u, []).append((i, r.rating, r.timestamp))
    return groups


@dataclass(frozen=True)
class SplitPair:
    train: InteractionDataset
    test: InteractionDataset
    seed: int


def split_half(dataset: InteractionDataset, seed: int) -> SplitPair:
    """Randomly split each user's interactions into disjoint halves.

    Train receives the extra interaction for odd-sized histories.  Both halves
    keep the full id maps so item indices agree across the split.  Deterministic
    given the seed.
    """
    rng = np.random.default_rng(seed)
    train_keep: list[np.ndarray] = []
    test_keep: list[np.ndarray] = []
    for u in range(dataset.n_users):
        count = dataset.items[u].size
        if count < 2:
            raise ValueError(
                f"user {dataset.user_ids[u]!r} has {count} interaction(s); "
                "need >= 2 to split"
            )
        perm = rng.permutation(count)
        n_train = (count + 1) // 2
        train_keep.append(np.sort(perm[:n_train]))
        test_keep.append(np.sort(perm[n_train:]))
    return SplitPair(
        train=dataset.replace_interactions(train_keep),
        test=dataset.replace_interactions(test_keep),
        seed=seed,
    )


def write_ratings(
    path: str | Path, ratings: list[RawRating], layout: TableLayout | None = None
) -> None:
    """Write ratings back out in the given (or default) delimited layout."""
    layout = layout or TableLayout()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter=layout.delimiter)
        if layout.header is not None:
            writer.writerow(layout.header)
        for r in ratings:
            row = [r.user_id, r.item_id, format_rating(r.rating)]
            if layout.has_timestamp:
                row.append("" if r.timestamp is None else str(r.timestamp))
            writer.writerow(row)


def format_rating(value: float) -> str:
    """Render 4.0 as '4.0' but keep halves like 2.5 intact."""
    return f"{value:g}" if value != int(value) else f"{value:.1f}"


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
