"""The smoothed, weighted, top-truncated DCG training objective.

For one user with observed items i, predicted scores f_i and gains G_i, the
data loss is

    -sum_i h(N - R_i) * G_i / ln(R_i + 2)        (truncated)
    -sum_i G_i / ln(R_i + 2)                     (untruncated)

where R_i = sum_{j != i} h(f_j - f_i) is the smoothed rank over the user's
observed items and h is either a scaled sigmoid or the rectifier.  The total
objective adds reg * ||theta||^2 over the parameter rows touched by the batch.
Gains default to G = w * (2^y - 1), so only relevant items carry weight; the
optional negative-gain mode uses G = w directly so downweighted items push
their scores down.

This module holds the loss, its exact analytical gradient (certified against
finite differences in the tests), a brute-force rank oracle, and the generic
trainer step whose per-user cost is quadratic in the number of observed items.
Natural log throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import InteractionDataset
from .model import FactorModel

# scores beyond this magnitude are treated as a diverged model
DIVERGENCE_LIMIT = 1.0e6


class DivergenceError(RuntimeError):
    """Predicted scores blew up during training."""

    def __init__(self, user: int, iteration: int | None = None):
        self.user = user
        self.iteration = iteration
        where = f" (iteration {iteration})" if iteration is not None else ""
        super().__init__(
            f"model diverged at user index {user}{where}: "
            f"|score| exceeded {DIVERGENCE_LIMIT:g}"
        )


def _expit(z: np.ndarray) -> np.ndarray:
    # exp(-|z|) never overflows, so both branches are stable
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _expit_scalar(z: float) -> float:
    e = math.exp(-abs(z))
    return 1.0 / (1.0 + e) if z >= 0 else e / (1.0 + e)


@dataclass(frozen=True)
class Smoothing:
    """Surrogate h replacing the rank comparison indicator.

    kind "sigmoid": h(x) = 1 / (1 + exp(-C x)) with scale C >= 1.
    kind "relu":    h(x) = max(0, x), with h'(0) = 0.
    """

    kind: str = "relu"
    scale: float = 7.0

    def __post_init__(self) -> None:
        if self.kind not in ("relu", "sigmoid"):
            raise ValueError(f"unknown smoothing kind {self.kind!r}")
        if self.kind == "sigmoid" and self.scale < 1.0:
            raise ValueError(f"sigmoid scale must be >= 1, got {self.scale}")

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        return _expit(self.scale * x)

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "relu":
            return (x > 0.0).astype(np.float64)
        g = _expit(self.scale * x)
        return self.scale * g * (1.0 - g)

    # scalar forms for the tight per-pair loops of the generic trainer
    def value_at(self, x: float) -> float:
        if self.kind == "relu":
            return x if x > 0.0 else 0.0
        return _expit_scalar(self.scale * x)

    def derivative_at(self, x: float) -> float:
        if self.kind == "relu":
            return 1.0 if x > 0.0 else 0.0
        g = _expit_scalar(self.scale * x)
        return self.scale * g * (1.0 - g)


@dataclass(frozen=True)
class Objective:
    """Hyperparameters of the training loss."""

    top_n: int = 20
    reg: float = 0.1
    smoothing: Smoothing = field(default_factory=Smoothing)
    truncated: bool = True
    negative_gain: bool = False

    def __post_init__(self) -> None:
        if self.top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {self.top_n}")
        if self.reg < 0:
            raise ValueError(f"reg must be >= 0, got {self.reg}")

    def gains(self, weights, relevance) -> np.ndarray:
        w = np.asarray(weights, dtype=np.float64)
        if self.negative_gain:
            return w.copy()
        return w * (np.exp2(np.asarray(relevance, dtype=np.float64)) - 1.0)

    def user_data_loss(self, ranks, gains) -> float:
        """Data term of the loss for one user, given smoothed ranks."""
        ranks = np.asarray(ranks, dtype=np.float64)
        terms = gains / np.log(ranks + 2.0)
        if self.truncated:
            terms = terms * self.smoothing.value(self.top_n - ranks)
        return -float(np.sum(terms))

    def rank_coefficient(self, ranks, gains) -> np.ndarray:
        """d(loss)/d(rank) per item; the only place the loss shape enters
        the gradient.  Positive for positive-gain items: pushing an item
        down the list increases the loss."""
        ranks = np.asarray(ranks, dtype=np.float64)
        logs = np.log(ranks + 2.0)
        c = gains / ((ranks + 2.0) * logs * logs)
        if self.truncated:
            gap = self.top_n - ranks
            c = gains * self.smoothing.derivative(gap) / logs \
                + self.smoothing.value(gap) * c
        return c

    def rank_coefficient_at(self, rank: float, gain: float) -> float:
        lg = math.log(rank + 2.0)
        c = gain / ((rank + 2.0) * lg * lg)
        if self.truncated:
            gap = self.top_n - rank
            c = gain * self.smoothing.derivative_at(gap) / lg \
                + self.smoothing.value_at(gap) * c
        return c


def smoothed_rank(smoothing: Smoothing, scores, i: int) -> float:
    """Smoothed rank of scores[i]: sum of h(f_j - f_i) over j != i.

    Brute-force form, kept as the oracle for the sorted fast path.  The
    self term is excluded: the exact indicator never counts an item above
    itself, and h(0) = 0.5 under the sigmoid would shift every rank.
    """
    scores = np.asarray(scores, dtype=np.float64)
    deltas = np.delete(scores, i) - scores[i]
    return float(np.sum(smoothing.value(deltas)))


def smoothed_ranks(smoothing: Smoothing, scores) -> np.ndarray:
    """All smoothed ranks of a score list via the pairwise difference matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    diff = scores[:, None] - scores[None, :]  # diff[j, i] = f_j - f_i
    h = smoothing.value(diff)
    np.fill_diagonal(h, 0.0)
    return h.sum(axis=0)


def exact_ranks(scores) -> np.ndarray:
    """Integer ranks (0 = best) under the exact comparison indicator.

    Ties break by ascending position, so of two equally scored items the
    earlier one ranks higher.  Deterministic.
    """
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.arange(scores.size), -scores))
    ranks = np.empty(scores.size, dtype=np.int64)
    ranks[order] = np.arange(scores.size)
    return ranks


def wdcg_exact(scores, weights, relevance, top_n: int) -> float:
    """Exact-indicator weighted DCG truncated at top_n.

    Sums w * (2^y - 1) / ln(rank + 2) over items whose integer rank is
    inside the top N.  With top_n >= len(scores) this is the untruncated
    weighted DCG.
    """
    ranks = exact_ranks(scores)
    keep = ranks < top_n
    w = np.asarray(weights, dtype=np.float64)
    gains = w * (np.exp2(np.asarray(relevance, dtype=np.float64)) - 1.0)
    return float(np.sum(gains[keep] / np.log(ranks[keep] + 2.0)))


@dataclass
class LossGradient:
    """Batch loss with gradients for exactly the touched parameter rows."""

    loss: float
    user_grads: dict[int, np.ndarray]
    item_grads: dict[int, np.ndarray]


def loss_and_gradient(
    model: FactorModel,
    dataset: InteractionDataset,
    users,
    objective: Objective,
) -> LossGradient:
    """Loss and its exact analytical gradient over a batch of users.

    The loss is the sum of per-user data terms plus reg times the squared
    norm of every row touched by the batch, each row counted once.  Item
    gradients carry the full cross terms (an item's score moves every other
    observed item's smoothed rank), so this function is the finite-difference
    reference; the trainers use the cheaper per-item form.

    Cost per user is quadratic in the number of observed items.
    """
    users = list(users)
    if not users:
        raise ValueError("users batch is empty")
    user_grads: dict[int, np.ndarray] = {}
    item_grads: dict[int, np.ndarray] = {}
    data_loss = 0.0
    for u in users:
        idx = dataset.items[u]
        theta_u = model.user_factors[u]
        rows = model.item_factors[idx]
        f = rows @ theta_u
        _check_finite(f, u)
        gains = objective.gains(dataset.weights[u], dataset.relevance[u])

        diff = f[:, None] - f[None, :]  # diff[j, i] = f_j - f_i
        h = objective.smoothing.value(diff)
        np.fill_diagonal(h, 0.0)
        ranks = h.sum(axis=0)
        hp = objective.smoothing.derivative(diff)
        np.fill_diagonal(hp, 0.0)

        c = objective.rank_coefficient(ranks, gains)
        # alpha_p collects how item p's score moves the batch loss:
        # cross terms via other items' ranks minus its own rank's pull
        alpha = hp @ c - c * hp.sum(axis=0)
        data_loss += objective.user_data_loss(ranks, gains)

        grad_u = user_grads.get(u)
        user_grads[u] = rows.T @ alpha if grad_u is None else grad_u + rows.T @ alpha
        for pos, p in enumerate(idx):
            p = int(p)
            contrib = alpha[pos] * theta_u
            if p in item_grads:
                item_grads[p] += contrib
            else:
                item_grads[p] = contrib

    reg_loss = 0.0
    if objective.reg:
        two_reg = 2.0 * objective.reg
        for u in set(users):
            row = model.user_factors[u]
            reg_loss += objective.reg * float(row @ row)
            user_grads[u] = user_grads[u] + two_reg * row
        for p in item_grads:
            row = model.item_factors[p]
            reg_loss += objective.reg * float(row @ row)
            item_grads[p] = item_grads[p] + two_reg * row

    return LossGradient(
        loss=data_loss + reg_loss, user_grads=user_grads, item_grads=item_grads
    )


@dataclass
class OpCounters:
    """Algorithmic work counters, the complexity witness for the trainers.

    score_evals counts user-item dot products, smooth_evals counts h/h'
    evaluations at score differences, kvec_adds counts k-vector accumulate
    operations, sort_comparisons counts the standard m*ceil(log2 m) bound
    for each sort performed.  Incremented with the operation counts the
    algorithm defines, independent of vectorization.
    """

    score_evals: int = 0
    smooth_evals: int = 0
    kvec_adds: int = 0
    sort_comparisons: int = 0
    users_processed: int = 0

    def total(self) -> int:
        return (
            self.score_evals
            + self.smooth_evals
            + self.kvec_adds
            + self.sort_comparisons
        )


def sgd_step_generic(
    model: FactorModel,
    dataset: InteractionDataset,
    users,
    objective: Objective,
    lr: float,
    counters: OpCounters | None = None,
) -> FactorModel:
    """One mini-batch pass of the generic trainer, any smoothing.

    Users are processed sequentially.  Per user: first the user row is
    updated with its gradient at current scores, then scores are recomputed
    against the new user row and every observed item row is updated with its
    own-rank gradient term.  The rank and gradient sums are direct loops
    over item pairs, so the per-user cost is O(k * m^2) for m observed
    items.  Updates the model in place.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for u in users:
        _generic_user_pass(model, dataset, int(u), objective, lr, counters)
    return model


def _generic_user_pass(model, dataset, u, objective, lr, counters):
    idx = dataset.items[u]
    m = idx.size
    k = model.n_factors
    gains = objective.gains(dataset.weights[u], dataset.relevance[u])
    h = objective.smoothing.value_at
    hp = objective.smoothing.derivative_at
    item_rows = model.item_factors

    rows = [item_rows[int(p)] for p in idx]
    theta_u = model.user_factors[u].copy()

    # phase 1: user row, scored against current parameters
    f = [float(r @ theta_u) for r in rows]
    _check_finite_list(f, u)
    grad_u = np.zeros(k)
    kvec_adds = 0
    for i in range(m):
        fi = f[i]
        rank = 0.0
        for j in range(m):
            if j != i:
                rank += h(f[j] - fi)
        c = objective.rank_coefficient_at(rank, float(gains[i]))
        if c == 0.0:
            continue
        inner = np.zeros(k)
        row_i = rows[i]
        for j in range(m):
            if j == i:
                continue
            d = hp(f[j] - fi)
            if d != 0.0:
                inner += d * (rows[j] - row_i)
                kvec_adds += 1
        grad_u += c * inner
        kvec_adds += 1
    if objective.reg:
        grad_u += (2.0 * objective.reg) * theta_u
    theta_u -= lr * grad_u
    model.user_factors[u] = theta_u

    # phase 2: item rows, scores frozen against the updated user row
    f = [float(r @ theta_u) for r in rows]
    _check_finite_list(f, u)
    coeffs = []
    for i in range(m):
        fi = f[i]
        rank = 0.0
        above = 0.0
        for j in range(m):
            if j != i:
                delta = f[j] - fi
                rank += h(delta)
                above += hp(delta)
        c = objective.rank_coefficient_at(rank, float(gains[i]))
        coeffs.append(c * above)
    two_lr_reg = 2.0 * lr * objective.reg
    for pos, p in enumerate(idx):
        p = int(p)
        # own-rank data term only: gradient -c_i * above_i * theta_u, plus decay
        row = item_rows[p]
        item_rows[p] = row - two_lr_reg * row + (lr * coeffs[pos]) * theta_u

    if counters is not None:
        counters.score_evals += 2 * m
        counters.smooth_evals += 4 * m * (m - 1)  # h + h' in both phases
        counters.kvec_adds += kvec_adds + m  # inner sums plus item updates
        counters.users_processed += 1


def _check_finite(f: np.ndarray, user: int) -> None:
    if f.size and (not np.all(np.isfinite(f)) or np.max(np.abs(f)) > DIVERGENCE_LIMIT):
        raise DivergenceError(user)


def _check_finite_list(f: list, user: int) -> None:
    for v in f:
        if not math.isfinite(v) or abs(v) > DIVERGENCE_LIMIT:
            raise DivergenceError(user)
