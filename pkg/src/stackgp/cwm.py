"""Constrained-weighted-mean combiner: simplex-constrained least squares.

Weights minimise ||y - H beta||^2 over the probability simplex via projected
gradient descent with Euclidean simplex projection. The convexity constraint
keeps every combined prediction inside the row-wise [min, max] envelope of
the member predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MAX_ITER = 10_000
OBJECTIVE_TOL = 1e-12


@dataclass(frozen=True)
class SimplexWeights:
    """Convex-combination weights: beta >= 0, sum(beta) = 1."""

    beta: np.ndarray
    degenerate: bool = False  # set when n < L left the minimiser underdetermined
    meta: dict = field(repr=False, default_factory=dict)

    def __post_init__(self):
        b = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "beta", b)
        if b.ndim != 1 or b.size < 1:
            raise DataError("beta must be a non-empty vector")
        if np.any(b < -1e-12) or abs(b.sum() - 1.0) > 1e-12:
            raise DataError("beta outside the probability simplex")


def project_simplex(v) -> SimplexWeights:
    """Euclidean projection onto {beta >= 0, sum(beta) = 1} (sort-threshold)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size < 1 or not np.all(np.isfinite(v)):
        raise DataError("project_simplex needs a finite 1-d vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    rho = np.max(ks[u - css / ks > 0])
    theta = css[rho - 1] / rho
    beta = np.maximum(v - theta, 0.0)
    beta /= beta.sum()  # renormalise away the last-ulp drift
    return SimplexWeights(beta=beta)


def fit_cwm(H, y) -> SimplexWeights:
    """Fit simplex weights minimising ||y - H beta||^2.

    Projected gradient with step 1 / (2 lambda_max(H^T H)); converged when the
    objective improves by less than OBJECTIVE_TOL.
    """
    H = np.asarray(H, dtype=float)
    y = np.asarray(y, dtype=float)
    if H.ndim != 2 or H.shape[0] != y.size:
        raise DataError(f"H must be n x L with n = len(y), got {H.shape}")
    if not np.all(np.isfinite(H)) or not np.all(np.isfinite(y)):
        raise DataError("non-finite entries in CWM inputs")
    n, L = H.shape
    if L == 1:
        return SimplexWeights(beta=np.ones(1), degenerate=n < 1, meta={"iterations": 0})

    G = H.T @ H
    hy = H.T @ y
    lam_max = float(np.linalg.eigvalsh(G)[-1])
    step = 1.0 / max(2.0 * lam_max, 1e-30)

    beta = np.full(L, 1.0 / L)
    obj = float(beta @ G @ beta - 2.0 * hy @ beta + y @ y)
    iterations = 0
    for iterations in range(1, MAX_ITER + 1):
        grad = 2.0 * (G @ beta - hy)
        beta_new = project_simplex(beta - step * grad).beta
        obj_new = float(beta_new @ G @ beta_new - 2.0 * hy @ beta_new + y @ y)
        if obj - obj_new < OBJECTIVE_TOL:
            beta = beta_new if obj_new <= obj else beta
            break
        beta, obj = beta_new, obj_new
    return SimplexWeights(beta=beta, degenerate=n < L, meta={"iterations": iterations})


def cwm_predict(weights: SimplexWeights, P) -> np.ndarray:
    """Combine member predictions: P @ beta (row-wise convex combination)."""
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[1] != weights.beta.size:
        raise DataError(f"prediction matrix has {P.shape[1] if P.ndim == 2 else '?'} columns, expected {weights.beta.size}")
    return P @ weights.beta
