"""Optimal subpattern assignment (OSPA) distance between finite point sets.

For sets X (|X| = m) and Y (|Y| = n) with m <= n, order p and cutoff c:

    ospa(X, Y) = [ (1/n) ( min_assignment sum_i min(d(x_i, y_a(i)), c)^p
                           + c^p (n - m) ) ]^(1/p)

and symmetrically for m > n; two empty sets have distance 0.  The metric
penalizes both localization error (capped at c) and cardinality mismatch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

__all__ = ["OspaParams", "ospa"]


@dataclass(frozen=True)
class OspaParams:
    order: float = 1.0
    cutoff: float = 10.0

    def __post_init__(self) -> None:
        if not np.isfinite(self.order) or self.order < 1.0:
            raise ValueError("order must be finite and >= 1")
        if self.cutoff <= 0.0:
            raise ValueError("cutoff must be positive")


def ospa(X: np.ndarray, Y: np.ndarray, params: OspaParams = OspaParams()) -> float:
    """OSPA distance between two sets of points given as (k, d) arrays."""
    X = np.asarray(X, dtype=float).reshape(-1, np.shape(X)[-1]) if np.size(X) else np.empty((0, 1))
    Y = np.asarray(Y, dtype=float).reshape(-1, np.shape(Y)[-1]) if np.size(Y) else np.empty((0, 1))
    m, n = X.shape[0], Y.shape[0]
    if m == 0 and n == 0:
        return 0.0
    if m == 0 or n == 0:
        return float(params.cutoff)
    if m > n:
        X, Y = Y, X
        m, n = n, m

    diff = X[:, None, :] - Y[None, :, :]
    dist = np.sqrt(np.einsum("mnd,mnd->mn", diff, diff))
    cost = np.minimum(dist, params.cutoff) ** params.order
    rows, cols = linear_sum_assignment(cost)
    total = cost[rows, cols].sum() + params.cutoff**params.order * (n - m)
    return float((total / n) ** (1.0 / params.order))
