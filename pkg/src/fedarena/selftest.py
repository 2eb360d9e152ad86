"""Built-in sanity suites behind the `selftest` subcommand.

These duplicate a slice of the test suite with naive re-implementations,
so a deployed copy can vouch for itself without pytest installed.
"""

import math

import numpy as np

from . import mlp
from .aggregation import atm
from .theory import AngleSample, TruncatedGaussian, deviation_bound, lemma_order_stats_check, monte_carlo_deviation
from .vectors import angle_between


def _check_angles():
    rng = np.random.default_rng(7)
    for _ in range(200):
        u = rng.normal(size=12)
        v = rng.normal(size=12)
        a = angle_between(u, v)
        assert abs(a - angle_between(v, u)) < 1e-12, "asymmetric angle"
        assert abs(a - angle_between(3.7 * u, v)) < 1e-9, "not scale invariant"
        assert 0 <= a <= math.pi, "angle out of range"
        # arccos near -1 turns a 1-ulp cosine error into ~2e-8 radians
        assert abs(angle_between(u, -u) - math.pi) < 1e-7, "antiparallel != pi"


def _naive_atm_kept(G, b):
    n = len(G)
    means = []
    for i in range(n):
        total = 0.0
        for j in range(n):
            if i != j:
                total += angle_between(G[i], G[j])
        means.append(total / (n - 1))
    order = sorted(range(n), key=lambda i: (means[i], i))
    return tuple(sorted(order[: n - 2 * b]))


def _check_atm():
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(3, 8))
        b = int(rng.integers(0, (n - 1) // 2 + 1))
        G = rng.normal(size=(n, 6))
        kept = atm(G, b).kept_indices
        assert kept == _naive_atm_kept(G, b), "trim selection mismatch"


def _check_gradient():
    rng = np.random.default_rng(3)
    for trial in range(3):
        params = mlp.init_params(((4, 6), (6, 3)), seed=trial)
        params = mlp.ModelParams(
            flat=params.flat + 0.05 * rng.normal(size=params.dim),
            layer_shapes=params.layer_shapes,
        )
        X = rng.normal(size=(5, 4))
        y = rng.integers(0, 3, size=5)
        g = mlp.gradient(params, X, y)
        fd = np.empty_like(g)
        for i in range(params.dim):
            h = 1e-5 * (1.0 + abs(params.flat[i]))
            up = params.flat.copy()
            up[i] += h
            dn = params.flat.copy()
            dn[i] -= h
            fd[i] = (
                mlp.loss(mlp.ModelParams(up, params.layer_shapes), X, y)
                - mlp.loss(mlp.ModelParams(dn, params.layer_shapes), X, y)
            ) / (2 * h)
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12)
        assert rel <= 1e-4, f"finite differences disagree (rel={rel:.2e})"


def _check_lemma():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        n = int(rng.integers(6, 31))
        b_hi = n // 2 - 1
        if b_hi < 1:
            continue
        b = int(rng.integers(1, b_hi + 1))
        m = int(rng.integers(0, b))
        theta = np.sort(rng.normal(size=n))
        mask = np.zeros(n, dtype=bool)
        mask[rng.choice(n, size=m, replace=False)] = True
        ok = lemma_order_stats_check(AngleSample(theta, mask), b)
        assert ok, f"order-statistics inequality failed (n={n} m={m} b={b})"


def _check_bound():
    dist = TruncatedGaussian(mu=math.pi / 2, sigma=0.3)
    for m, b in ((0, 1), (2, 3)):
        emp = monte_carlo_deviation(dist, 20, m, b, "extreme_high", 500, seed=0)
        bound = deviation_bound(20, m, b, dist.var)
        assert emp <= bound, f"empirical {emp:.4g} exceeds bound {bound:.4g}"


SUITES = (
    ("angles", _check_angles),
    ("angular-trim", _check_atm),
    ("gradient-fd", _check_gradient),
    ("order-stats", _check_lemma),
    ("deviation-bound", _check_bound),
)
