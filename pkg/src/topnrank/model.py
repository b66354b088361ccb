"""Latent factor model: scores are inner products of user and item factors.

Factors are initialized i.i.d. uniform on (0, b) with b chosen so that the
score of a random user/item pair has unit-order statistics: for k factors,
b = 2 / (7k)^(1/4) gives score mean k*b^2/4 and variance 7*k*b^4/144 = 1/9,
i.e. standard deviation 1/3 regardless of k.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def init_width(n_factors: int) -> float:
    """Upper bound b of the U(0, b) factor initialization for k factors."""
    if n_factors < 1:
        raise ValueError(f"n_factors must be >= 1, got {n_factors}")
    return 2.0 / (7.0 * n_factors) ** 0.25


def score_moments(n_factors: int, width: float | None = None) -> tuple[float, float]:
    """(mean, variance) of a random user-item score under U(0, b) init.

    Each of the k factor products has mean b^2/4 and variance 7*b^4/144,
    and the products are independent, so the score sums the moments.
    """
    b = init_width(n_factors) if width is None else width
    mean = n_factors * b**2 / 4.0
    var = n_factors * 7.0 * b**4 / 144.0
    return mean, var


@dataclass
class FactorModel:
    """User and item factor matrices, shape (n, k) and (m, k), float64."""

    user_factors: np.ndarray
    item_factors: np.ndarray

    def __post_init__(self) -> None:
        self.user_factors = np.ascontiguousarray(self.user_factors, dtype=np.float64)
        self.item_factors = np.ascontiguousarray(self.item_factors, dtype=np.float64)
        if self.user_factors.ndim != 2 or self.item_factors.ndim != 2:
            raise ValueError("factor matrices must be 2-D")
        if self.user_factors.shape[1] != self.item_factors.shape[1]:
            raise ValueError(
                "user and item factor dimensionality differ: "
                f"{self.user_factors.shape[1]} vs {self.item_factors.shape[1]}"
            )

    @property
    def n_users(self) -> int:
        return self.user_factors.shape[0]

    @property
    def n_items(self) -> int:
        return self.item_factors.shape[0]

    @property
    def n_factors(self) -> int:
        return self.user_factors.shape[1]

    def scores(self, user: int, items: np.ndarray | None = None) -> np.ndarray:
        """Predicted scores of one user for ``items`` (default: all items)."""
        mat = self.item_factors if items is None else self.item_factors[items]
        return mat @ self.user_factors[user]

    def score_matrix(self) -> np.ndarray:
        """Dense (n_users, n_items) score matrix.  Small problems only."""
        return self.user_factors @ self.item_factors.T

    def copy(self) -> "FactorModel":
        return FactorModel(self.user_factors.copy(), self.item_factors.copy())

    def sq_distance(self, other: "FactorModel") -> float:
        """Sum of squared element-wise parameter differences."""
        du = self.user_factors - other.user_factors
        di = self.item_factors - other.item_factors
        return float(np.sum(du * du) + np.sum(di * di))


def init_model(
    n_users: int,
    n_items: int,
    n_factors: int,
    rng: np.random.Generator,
    width: float | None = None,
) -> FactorModel:
    """Fresh model with all factors drawn i.i.d. from U(0, b)."""
    b = init_width(n_factors) if width is None else width
    if b <= 0:
        raise ValueError(f"width must be positive, got {b}")
    return FactorModel(
        user_factors=rng.uniform(0.0, b, size=(n_users, n_factors)),
        item_factors=rng.uniform(0.0, b, size=(n_items, n_factors)),
    )


def save_checkpoint(
    path: str | Path, model: FactorModel, meta: dict | None = None
) -> None:
    """Save factors plus a JSON metadata blob to an .npz file.

    Round trip is bit-exact: float64 arrays are stored raw, metadata as a
    JSON string.
    """
    meta_json = json.dumps(meta or {}, sort_keys=True)
    np.savez(
        path,
        user_factors=model.user_factors,
        item_factors=model.item_factors,
        meta=np.array(meta_json),
    )


def load_checkpoint(path: str | Path) -> tuple[FactorModel, dict]:
    """Inverse of save_checkpoint."""
    with np.load(path, allow_pickle=False) as npz:
        model = FactorModel(
            user_factors=npz["user_factors"].copy(),
            item_factors=npz["item_factors"].copy(),
        )
        meta = json.loads(str(npz["meta"]))
    return model, meta
