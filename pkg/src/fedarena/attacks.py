"""Attacker behaviours: passive inference, gradient ascent, masked-gradient
crafting, and the angle-constrained poisoning pipeline.

The main pipeline flips the target samples' labels, builds the resulting
attack gradient, greedily picks mask samples whose combined gradient lets
the blend sit as far from the benign references as the benign spread
allows, then tunes the attack-gradient scale over a grid under the same
constraint. A crafted update is "feasible" when its largest angle to any
benign reference stays within the largest benign pairwise angle.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import mlp
from .errors import (
    EmptyBatch,
    EmptyMaskBudget,
    SingleClassDataset,
    TooFewReferences,
)
from .rngstream import substream
from .vectors import _as_matrix, angle_between, pairwise_angles, scaled_add

ADAPTIVE_MAX_ITERS = 50
AGREVADER_MAX_HALVINGS = 20


@dataclass(frozen=True)
class AttackStrategy:
    """Which attacker runs and with what knobs."""

    kind: str = "none"  # none|passive|gradient_ascent|agrevader|fedpoisonmia|adaptive
    mask_fraction: float = 0.1  # share of the mask pool actually used
    alpha_grid: tuple[float, ...] = tuple(np.geomspace(0.01, 100.0, 25))
    knowledge: str = "full"  # full|partial
    ga_scale: float = 1.0


KINDS = ("none", "passive", "gradient_ascent", "agrevader", "fedpoisonmia", "adaptive")


@dataclass(frozen=True)
class AttackerContext:
    """Everything the poisoning attacker holds: targets, mask pool, knobs."""

    attack_features: np.ndarray
    attack_labels: np.ndarray
    mask_features: np.ndarray
    mask_labels: np.ndarray
    num_classes: int
    mask_fraction: float
    alpha_grid: tuple[float, ...]
    knowledge: str
    flip_seed: int


@dataclass(frozen=True)
class CraftResult:
    g_malicious: np.ndarray
    chosen_alpha: float
    selected_mask_indices: tuple[int, ...]
    feasible: bool
    objective_value: float  # max angle to a benign reference, radians


@dataclass(frozen=True)
class GreedyStep:
    chosen_index: int
    objective: float
    feasible: bool


def mask_budget(mask_fraction: float, pool_size: int) -> int:
    """floor(fraction * pool), nudged so 0.1 * 30 style products stay exact."""
    return math.floor(mask_fraction * pool_size + 1e-9)


def flip_labels(labels, num_classes: int, seed: int) -> np.ndarray:
    """Replace every label by a uniformly random different one."""
    if num_classes < 2:
        raise SingleClassDataset("label flipping needs at least 2 classes")
    y = np.asarray(labels, dtype=np.int64)
    offsets = substream(seed, "flip").integers(1, num_classes, size=y.shape[0])
    return (y + offsets) % num_classes


def attack_gradient(params: mlp.ModelParams, features, flipped_labels) -> np.ndarray:
    """Gradient on the flipped-label target set."""
    return mlp.gradient(params, features, flipped_labels)


def benign_angle_budget(benign_grads) -> float:
    """Largest pairwise angle among the benign references."""
    G = _as_matrix(benign_grads)
    if G.shape[0] < 2:
        raise TooFewReferences(f"need at least 2 references, got {G.shape[0]}")
    A = pairwise_angles(G)
    return float(A.max())


def _max_angle_to_refs(g, refs) -> float:
    return max(angle_between(g, r) for r in refs)


def greedy_mask_select(
    mask_features,
    mask_labels,
    mask_fraction: float,
    params: mlp.ModelParams,
    g_attack,
    alpha_fixed: float,
    benign_grads,
) -> tuple[tuple[int, ...], tuple[GreedyStep, ...]]:
    """Grow the mask subset one sample at a time.

    Each step adds the candidate maximising the blend's largest angle to a
    benign reference among candidates that keep it within the benign
    budget. If no candidate is feasible the step falls back to the one
    minimising that angle (marked infeasible in the trace) so the budget
    cardinality is always reached.
    """
    X = np.asarray(mask_features, dtype=np.float64)
    y = np.asarray(mask_labels, dtype=np.int64)
    budget = mask_budget(mask_fraction, X.shape[0])
    if budget < 1:
        raise EmptyMaskBudget(
            f"mask_fraction {mask_fraction} of {X.shape[0]} samples selects nothing"
        )
    refs = _as_matrix(benign_grads)
    angle_budget = benign_angle_budget(refs)

    selected: list[int] = []
    trace: list[GreedyStep] = []
    for _ in range(budget):
        candidates = [k for k in range(X.shape[0]) if k not in selected]
        objectives = np.empty(len(candidates))
        for ci, k in enumerate(candidates):
            trial = selected + [k]
            g_mask = mlp.gradient(params, X[trial], y[trial])
            g_mal = scaled_add(alpha_fixed, np.asarray(g_attack), g_mask)
            objectives[ci] = _max_angle_to_refs(g_mal, refs)
        feas = objectives <= angle_budget
        if feas.any():
            masked = np.where(feas, objectives, -np.inf)
            pick = int(np.argmax(masked))
            step_ok = True
        else:
            pick = int(np.argmin(objectives))
            step_ok = False
        selected.append(candidates[pick])
        trace.append(
            GreedyStep(
                chosen_index=candidates[pick],
                objective=float(objectives[pick]),
                feasible=step_ok,
            )
        )
    return tuple(selected), tuple(trace)


def optimize_alpha(
    g_attack, g_mask, benign_grads, alpha_grid
) -> tuple[float, bool]:
    """Grid-search the attack-gradient scale.

    Returns the feasible grid point with the largest max-angle objective
    (lowest scale on ties), or (0, False) when no point satisfies the
    benign-spread constraint.
    """
    refs = _as_matrix(benign_grads)
    angle_budget = benign_angle_budget(refs)
    g_attack = np.asarray(g_attack, dtype=np.float64)
    g_mask = np.asarray(g_mask, dtype=np.float64)
    best_alpha = 0.0
    best_obj = -np.inf
    feasible = False
    for alpha in alpha_grid:
        obj = _max_angle_to_refs(scaled_add(alpha, g_attack, g_mask), refs)
        if obj <= angle_budget and obj > best_obj:
            best_alpha = float(alpha)
            best_obj = obj
            feasible = True
    return best_alpha, feasible


def craft_fedpoisonmia(
    ctx: AttackerContext, params: mlp.ModelParams, benign_grads
) -> CraftResult:
    """Full pipeline: flip labels, build the attack gradient, greedily pick
    mask samples (scale fixed at 1), then tune the scale on the grid.
    """
    flipped = flip_labels(ctx.attack_labels, ctx.num_classes, ctx.flip_seed)
    g_attack = attack_gradient(params, ctx.attack_features, flipped)
    selected, _trace = greedy_mask_select(
        ctx.mask_features,
        ctx.mask_labels,
        ctx.mask_fraction,
        params,
        g_attack,
        1.0,
        benign_grads,
    )
    idx = list(selected)
    g_mask = mlp.gradient(params, ctx.mask_features[idx], ctx.mask_labels[idx])
    alpha, feasible = optimize_alpha(g_attack, g_mask, benign_grads, ctx.alpha_grid)
    g_mal = scaled_add(alpha, g_attack, g_mask)
    objective = _max_angle_to_refs(g_mal, _as_matrix(benign_grads))
    return CraftResult(
        g_malicious=g_mal,
        chosen_alpha=alpha,
        selected_mask_indices=selected,
        feasible=feasible,
        objective_value=objective,
    )


def craft_gradient_ascent(
    params: mlp.ModelParams, features, labels, scale: float
) -> np.ndarray:
    """Ascent step on the target samples: the negated descent gradient."""
    X = np.asarray(features, dtype=np.float64)
    if X.shape[0] == 0:
        raise EmptyBatch("target set is empty")
    return -float(scale) * mlp.gradient(params, X, labels)


def craft_agrevader(
    params: mlp.ModelParams,
    flipped_features,
    flipped_labels,
    mask_features,
    mask_labels,
    benign_grads,
) -> np.ndarray:
    """Blend the flipped-label gradient with the full-pool mask gradient,
    halving the attack share until the blend lands within the benign
    cluster's Euclidean diameter (or give up and send the mask alone).
    """
    refs = _as_matrix(benign_grads)
    g_attack = mlp.gradient(params, flipped_features, flipped_labels)
    g_mask = mlp.gradient(params, mask_features, mask_labels)
    if refs.shape[0] >= 2:
        diffs = refs[:, None, :] - refs[None, :, :]
        dist_budget = float(np.sqrt(np.einsum("ijk,ijk->ij", diffs, diffs).max()))
    else:
        dist_budget = 0.0
    scale = 1.0
    for _ in range(AGREVADER_MAX_HALVINGS + 1):
        g = scale * g_attack + g_mask
        nearest = float(np.min(np.linalg.norm(refs - g, axis=1)))
        if nearest <= dist_budget:
            return g
        scale /= 2.0
    return g_mask


def craft_adaptive(benign_grads, g_attack, trim_b: int) -> np.ndarray:
    """Pull the attack gradient toward the benign cluster until its mean
    angle drops below the angular-trim threshold (or the iteration cap).

    Each failed check averages the attack gradient with the benign
    gradient farthest from it in angle.
    """
    refs = _as_matrix(benign_grads)
    if refs.shape[0] < 2:
        raise TooFewReferences(f"need at least 2 references, got {refs.shape[0]}")
    g = np.asarray(g_attack, dtype=np.float64)
    if trim_b <= 0:
        return g  # nothing is ever trimmed
    n = refs.shape[0] + 1
    if 2 * trim_b >= n:
        raise TooFewReferences(f"2*{trim_b} >= {n} total gradients")
    for _ in range(ADAPTIVE_MAX_ITERS):
        stack = np.vstack([refs, g])
        A = pairwise_angles(stack)
        means = A.sum(axis=1) / (n - 1)
        threshold = np.sort(means)[::-1][2 * trim_b - 1]
        if means[-1] < threshold:
            break
        to_attack = A[-1, :-1]
        farthest = int(np.argmax(to_attack))
        g = 0.5 * (g + refs[farthest])
    return g


def passive_infer(params: mlp.ModelParams, features, labels) -> np.ndarray:
    """Member flag per sample: correctly predicted means member."""
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    return mlp.predict_batch(params, X) == y
