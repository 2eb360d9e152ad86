"""Dense vector arithmetic and angular geometry for client updates.

Gradients are 1-D float64 numpy arrays. Angles are radians in [0, pi].
All functions are pure; nothing here holds state.
"""

import numpy as np

from .errors import DegenerateGradient, DimensionMismatch

# Below this L2 norm a gradient carries no usable direction.
NORM_FLOOR = 1e-12


def as_vector(u) -> np.ndarray:
    """Coerce to a finite 1-D float64 array, raising on bad input."""
    arr = np.asarray(u, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"expected 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DegenerateGradient("vector contains NaN or Inf entries")
    return arr


def angle_between(u, v) -> float:
    """Angle in radians between two non-degenerate vectors of equal dimension.

    The cosine is clamped to [-1, 1] before arccos so nearly parallel
    vectors cannot produce NaN from floating-point drift.
    """
    u = as_vector(u)
    v = as_vector(v)
    if u.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"dimensions differ: {u.shape[0]} vs {v.shape[0]}")
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu <= NORM_FLOOR or nv <= NORM_FLOOR:
        raise DegenerateGradient(f"norms ({nu:.3e}, {nv:.3e}) below floor {NORM_FLOOR}")
    cos = float(np.dot(u, v)) / (nu * nv)
    return float(np.arccos(min(1.0, max(-1.0, cos))))


def pairwise_angles(grads) -> np.ndarray:
    """Symmetric zero-diagonal matrix of angles between all gradient pairs."""
    G = _as_matrix(grads)
    n = G.shape[0]
    if n < 2:
        raise DimensionMismatch(f"need at least 2 gradients, got {n}")
    norms = np.linalg.norm(G, axis=1)
    bad = np.nonzero(norms <= NORM_FLOOR)[0]
    if bad.size:
        raise DegenerateGradient(f"gradient {int(bad[0])} has norm {norms[bad[0]]:.3e}")
    unit = G / norms[:, None]
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    theta = np.arccos(cos)
    # mirror the strict upper triangle so symmetry is exact, not just close
    theta = np.triu(theta, k=1)
    theta = theta + theta.T
    return theta


def scaled_add(a: float, u, v) -> np.ndarray:
    """Elementwise a*u + v."""
    u = as_vector(u)
    v = as_vector(v)
    if u.shape[0] != v.shape[0]:
        raise DimensionMismatch(f"dimensions differ: {u.shape[0]} vs {v.shape[0]}")
    return float(a) * u + v


def _as_matrix(grads) -> np.ndarray:
    """Stack a gradient collection into a finite (n, d) float64 matrix."""
    try:
        G = np.asarray(grads, dtype=np.float64)
    except ValueError:
        raise DimensionMismatch("gradients have mismatched dimensions") from None
    if G.ndim != 2:
        raise DimensionMismatch(f"expected a stack of 1-D vectors, got shape {G.shape}")
    if not np.all(np.isfinite(G)):
        bad = np.nonzero(~np.all(np.isfinite(G), axis=1))[0]
        raise DegenerateGradient(f"gradient {int(bad[0])} contains NaN or Inf entries")
    return G
