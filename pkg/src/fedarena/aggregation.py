"""Server-side aggregation rules and gradient filters.

Every rule consumes a stack of client gradients (n, d) and returns an
AggregationOutcome: the aggregate, which client indices survived any
filtering, and rule-specific diagnostics. Rules are pure given their
inputs (noise injection takes an explicit seed).
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import mlp
from .errors import (
    EmptyInput,
    EmptyValidationSet,
    InvalidConfig,
    InvalidK,
    InvalidKrumParams,
    TrimTooLarge,
    WeightMismatch,
)
from .rngstream import substream
from .vectors import _as_matrix, pairwise_angles


@dataclass(frozen=True)
class AggregationOutcome:
    aggregate: np.ndarray
    kept_indices: tuple[int, ...]
    diagnostics: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AggregationRule:
    """Config for one rule; `inner` nests a rule under the dp/topk wrappers."""

    kind: str = "fedavg"  # fedavg|median|trimmed_mean|atm|multi_krum|dp|topk|fang
    trim_b: int = 1
    dp_sigma: float = 0.05
    top_k: int = 0  # 0 means keep every dimension
    krum_f: int = 1
    krum_count: int = 0  # 0 means n - krum_f at call time
    fang_mode: str = "lfr"  # err|lfr
    fang_remove: int = 1
    inner: Optional["AggregationRule"] = None


KINDS = ("fedavg", "median", "trimmed_mean", "atm", "multi_krum", "dp", "topk", "fang")


def fedavg(grads, weights=None) -> AggregationOutcome:
    """Weighted mean of the gradients (uniform when weights is None).

    Equal weights fall through to the same column-mean computation the
    trimming rules use, so rule equivalences hold bit-for-bit.
    """
    G = _as_matrix(grads)
    n = G.shape[0]
    if n == 0:
        raise EmptyInput("no gradients to aggregate")
    if weights is None:
        return AggregationOutcome(aggregate=G.mean(axis=0), kept_indices=tuple(range(n)))
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (n,):
        raise WeightMismatch(f"weights shaped {w.shape} for {n} gradients")
    if np.any(w < 0) or w.sum() <= 0:
        raise WeightMismatch("weights must be non-negative with positive sum")
    if np.all(w == w[0]):
        return AggregationOutcome(aggregate=G.mean(axis=0), kept_indices=tuple(range(n)))
    w = w / w.sum()
    return AggregationOutcome(aggregate=(w[:, None] * G).sum(axis=0), kept_indices=tuple(range(n)))


def coordinate_median(grads) -> AggregationOutcome:
    """Element-wise median; even counts average the two central values."""
    G = _as_matrix(grads)
    if G.shape[0] == 0:
        raise EmptyInput("no gradients to aggregate")
    return AggregationOutcome(
        aggregate=np.median(G, axis=0), kept_indices=tuple(range(G.shape[0]))
    )


def trimmed_mean(grads, trim_b: int) -> AggregationOutcome:
    """Per dimension, drop the b largest and b smallest values, then average."""
    G = _as_matrix(grads)
    n = G.shape[0]
    if trim_b < 0 or 2 * trim_b >= n:
        raise TrimTooLarge(f"trim {trim_b} per side infeasible for {n} gradients")
    if trim_b == 0:
        core = G  # same float path as the unweighted mean
    else:
        core = np.sort(G, axis=0)[trim_b : n - trim_b]
    return AggregationOutcome(
        aggregate=core.mean(axis=0),
        kept_indices=tuple(range(n)),
        diagnostics={"trim_b": trim_b},
    )


def mean_angles(grads, include_self: bool = False) -> np.ndarray:
    """Per-gradient mean angle to the others.

    The self-angle is zero, so including it and dividing by n instead of
    n-1 rescales every score by the same factor and cannot change the
    ranking; both conventions are exposed so that equivalence is testable.
    """
    A = pairwise_angles(grads)
    n = A.shape[0]
    if include_self:
        return A.sum(axis=1) / n
    return A.sum(axis=1) / (n - 1)


def atm(grads, trim_b: int, include_self: bool = False) -> AggregationOutcome:
    """Angular trimmed-mean: drop the 2b gradients with the largest mean
    angle to the rest, average the survivors.

    Ties in the mean angle keep the lower client index.
    """
    G = _as_matrix(grads)
    n = G.shape[0]
    if n < 2:
        raise EmptyInput(f"angular trimming needs at least 2 gradients, got {n}")
    if trim_b < 0 or 2 * trim_b >= n:
        raise TrimTooLarge(f"2*{trim_b} >= {n} gradients")
    scores = mean_angles(G, include_self=include_self)
    order = np.lexsort((np.arange(n), scores))  # ascending score, index breaks ties
    kept = np.sort(order[: n - 2 * trim_b])
    threshold = float(scores[order[n - 2 * trim_b]]) if trim_b > 0 else None
    return AggregationOutcome(
        aggregate=G[kept].mean(axis=0),
        kept_indices=tuple(int(k) for k in kept),
        diagnostics={"mean_angles": scores, "trim_threshold": threshold},
    )


def multi_krum(grads, num_malicious: int, count: int) -> AggregationOutcome:
    """Iteratively pick the gradient whose n-f-1 nearest (remaining)
    neighbours are closest in squared distance, until `count` are chosen;
    the aggregate is their mean.
    """
    G = _as_matrix(grads)
    n = G.shape[0]
    f = int(num_malicious)
    if n - f - 1 < 1:
        raise InvalidKrumParams(f"n-f-1 = {n - f - 1} < 1")
    if not 1 <= count <= n:
        raise InvalidKrumParams(f"count {count} outside [1, {n}]")
    diffs = G[:, None, :] - G[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diffs, diffs)
    remaining = list(range(n))
    chosen: list[int] = []
    while len(chosen) < count:
        scores = []
        for r in remaining:
            others = [o for o in remaining if o != r]
            neigh = min(n - f - 1, len(others))
            if neigh == 0:
                scores.append(0.0)
            else:
                scores.append(float(np.sort(d2[r, others])[:neigh].sum()))
        best = remaining[int(np.argmin(scores))]
        chosen.append(best)
        remaining.remove(best)
    kept = sorted(chosen)
    return AggregationOutcome(
        aggregate=G[kept].mean(axis=0),
        kept_indices=tuple(chosen),
        diagnostics={"selection_order": tuple(chosen)},
    )


def dp_wrap(grads, noise_std: float, inner: Callable, seed: int) -> AggregationOutcome:
    """Add iid Gaussian noise to every gradient coordinate, then aggregate."""
    if noise_std < 0:
        raise InvalidConfig(f"noise std {noise_std} is negative")
    G = _as_matrix(grads)
    if noise_std > 0:
        G = G + substream(seed, "dp_noise").normal(0.0, noise_std, size=G.shape)
    return inner(G)


def topk_wrap(grads, k: int, inner: Callable) -> AggregationOutcome:
    """Keep each gradient's k largest-magnitude coordinates (ties keep the
    lower dimension index), zero the rest, then aggregate."""
    G = _as_matrix(grads)
    d = G.shape[1]
    if not 1 <= k <= d:
        raise InvalidK(f"k {k} outside [1, {d}]")
    sparse = np.zeros_like(G)
    for i in range(G.shape[0]):
        keep = np.argsort(-np.abs(G[i]), kind="stable")[:k]
        sparse[i, keep] = G[i, keep]
    return inner(sparse)


def fang_filter(
    grads,
    params: mlp.ModelParams,
    val_features,
    val_labels,
    mode: str,
    lr: float,
    remove_count: int = 1,
) -> AggregationOutcome:
    """Leave-one-out validation filter: repeatedly drop the gradient whose
    removal gives the best validation score (error rate or loss), then
    average the survivors.
    """
    G = _as_matrix(grads)
    n = G.shape[0]
    if n < 2:
        raise EmptyInput(f"leave-one-out filtering needs at least 2 gradients, got {n}")
    X = np.asarray(val_features, dtype=np.float64)
    y = np.asarray(val_labels, dtype=np.int64)
    if X.shape[0] == 0:
        raise EmptyValidationSet("validation set is empty")
    if mode not in ("err", "lfr"):
        raise InvalidConfig(f"unknown fang mode {mode!r}")

    def score(model: mlp.ModelParams) -> float:
        if mode == "err":
            return float(np.mean(mlp.predict_batch(model, X) != y))
        return mlp.loss(model, X, y)

    kept = list(range(n))
    for _ in range(min(remove_count, n - 1)):
        scores = []
        for i in kept:
            rest = [j for j in kept if j != i]
            candidate = mlp.apply_update(params, G[rest].mean(axis=0), lr)
            scores.append(score(candidate))
        worst = kept[int(np.argmin(scores))]
        kept.remove(worst)
    return AggregationOutcome(
        aggregate=G[kept].mean(axis=0),
        kept_indices=tuple(kept),
        diagnostics={"mode": mode},
    )


def apply_rule(
    rule: AggregationRule,
    grads,
    weights=None,
    *,
    seed: int = 0,
    params: Optional[mlp.ModelParams] = None,
    val_features=None,
    val_labels=None,
    lr: float = 0.01,
) -> AggregationOutcome:
    """Dispatch a configured rule. Weights reach fedavg only; wrapper rules
    recurse into their `inner` configuration."""
    G = _as_matrix(grads)
    n, d = G.shape
    kind = rule.kind
    if kind == "fedavg":
        return fedavg(G, weights)
    if kind == "median":
        return coordinate_median(G)
    if kind == "trimmed_mean":
        return trimmed_mean(G, rule.trim_b)
    if kind == "atm":
        return atm(G, rule.trim_b)
    if kind == "multi_krum":
        count = rule.krum_count if rule.krum_count > 0 else n - rule.krum_f
        return multi_krum(G, rule.krum_f, count)
    if kind in ("dp", "topk"):
        inner_rule = rule.inner if rule.inner is not None else AggregationRule("fedavg")

        def inner(g):
            return apply_rule(
                inner_rule,
                g,
                weights,
                seed=seed,
                params=params,
                val_features=val_features,
                val_labels=val_labels,
                lr=lr,
            )

        if kind == "dp":
            return dp_wrap(G, rule.dp_sigma, inner, seed)
        k = rule.top_k if rule.top_k > 0 else d
        return topk_wrap(G, k, inner)
    if kind == "fang":
        if params is None:
            raise InvalidConfig("fang rule needs the current model")
        return fang_filter(
            G, params, val_features, val_labels, rule.fang_mode, lr, rule.fang_remove
        )
    raise InvalidConfig(f"unknown aggregation kind {kind!r}")
