"""Additive model with penalised cubic B-spline terms.

Each feature gets a cubic spline basis with interior knots at training
quantiles and a curvature penalty: the exact Gram matrix of the basis'
integrated squared second derivatives, whose nullspace is the affine
functions. Smoothing strength is chosen per term by GCV on a single-term
pre-pass, then frozen while backfitting cycles the terms to convergence.
Basis columns are centred on the training sample so every term has
empirical mean zero and the intercept is exactly mean(y).

Features with fewer distinct values than the requested basis size get a
reduced basis (with a warning): a smaller spline basis when at least 4
distinct values exist, a centred linear term below that, and nothing at all
for constant features. Prediction clamps inputs to the training range, so
the fit extrapolates flat rather than exploding.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve

from ..errors import NumericalError

SPLINE_DEGREE = 3
MIN_UNIQUE_FOR_SPLINE = 4
RIDGE_REL = 1e-9    # regularises the centred basis' constant direction


_GAUSS3_NODES = np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_GAUSS3_WEIGHTS = np.array([5.0, 8.0, 5.0]) / 9.0


def _curvature_penalty(knots: np.ndarray) -> np.ndarray:
    """Gram matrix of integrated squared second derivatives of the basis.

    Cubic B-spline second derivatives are piecewise linear, so their pairwise
    products are quadratic per knot span and 3-point Gauss quadrature is
    exact. Nodes are strictly interior, dodging the derivative jumps at the
    knots themselves.
    """
    p = len(knots) - SPLINE_DEGREE - 1
    d2 = BSpline(knots, np.eye(p), SPLINE_DEGREE).derivative(2)
    P = np.zeros((p, p))
    spans = np.unique(knots)
    for a, b in zip(spans[:-1], spans[1:]):
        half = 0.5 * (b - a)
        xs = 0.5 * (a + b) + half * _GAUSS3_NODES
        D2 = d2(xs)
        P += (D2 * (half * _GAUSS3_WEIGHTS)[:, None]).T @ D2
    return 0.5 * (P + P.T)


def _spline_knots(x: np.ndarray, n_splines: int) -> np.ndarray:
    a, b = float(x.min()), float(x.max())
    n_interior = max(0, n_splines - SPLINE_DEGREE - 1)
    qs = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    interior = np.unique(np.quantile(x, qs)) if n_interior else np.empty(0)
    interior = interior[(interior > a) & (interior < b)]
    return np.concatenate([[a] * (SPLINE_DEGREE + 1), interior, [b] * (SPLINE_DEGREE + 1)])


def _design(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    lo, hi = knots[0], knots[-1]
    return BSpline.design_matrix(np.clip(x, lo, hi), knots, SPLINE_DEGREE).toarray()


@dataclass
class GamTerm:
    kind: str                      # "spline" | "linear" | "zero"
    coef: np.ndarray
    knots: np.ndarray
    col_means: np.ndarray
    lam: float
    x_min: float
    x_max: float

    def basis(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros((len(x), 0))
        if self.kind == "linear":
            return np.clip(x, self.x_min, self.x_max)[:, None] - self.col_means
        return _design(x, self.knots) - self.col_means

    def value(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "zero":
            return np.zeros(len(x))
        return self.basis(x) @ self.coef


@dataclass
class GamModel:
    intercept: float
    terms: list
    meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.intercept)
        for j, term in enumerate(self.terms):
            out += term.value(X[:, j])
        return out

    def state_dict(self) -> dict:
        return {
            "intercept": self.intercept,
            "terms": [{
                "kind": t.kind,
                "coef": t.coef.tolist(),
                "knots": t.knots.tolist(),
                "col_means": t.col_means.tolist(),
                "lam": t.lam,
                "x_min": t.x_min,
                "x_max": t.x_max,
            } for t in self.terms],
        }

    @classmethod
    def from_state(cls, state: dict) -> "GamModel":
        terms = [GamTerm(
            kind=d["kind"],
            coef=np.asarray(d["coef"], dtype=float),
            knots=np.asarray(d["knots"], dtype=float),
            col_means=np.asarray(d["col_means"], dtype=float),
            lam=float(d["lam"]),
            x_min=float(d["x_min"]),
            x_max=float(d["x_max"]),
        ) for d in state["terms"]]
        return cls(intercept=float(state["intercept"]), terms=terms)


def _term_scaffold(x: np.ndarray, n_splines: int, col_name: str) -> GamTerm:
    ux = np.unique(x)
    a, b = float(x.min()), float(x.max())
    if ux.size < 2:
        warnings.warn(f"gam: column {col_name} is constant, term dropped")
        return GamTerm("zero", np.empty(0), np.empty(0), np.empty(0), 0.0, a, b)
    if ux.size < MIN_UNIQUE_FOR_SPLINE:
        warnings.warn(f"gam: column {col_name} has {ux.size} distinct values, using a linear term")
        means = np.array([x.mean()])
        return GamTerm("linear", np.zeros(1), np.empty(0), means, 0.0, a, b)
    if ux.size < n_splines:
        warnings.warn(f"gam: column {col_name} has {ux.size} distinct values, "
                      f"basis reduced from {n_splines}")
        n_splines = ux.size
    knots = _spline_knots(x, n_splines)
    B = _design(x, knots)
    return GamTerm("spline", np.zeros(B.shape[1]), knots, B.mean(axis=0), 0.0, a, b)


def _penalised_factor(B: np.ndarray, P: np.ndarray, lam: float):
    G = B.T @ B
    H0 = G + lam * P
    # ridge scales with the data term so the penalty's affine nullspace stays
    # data-driven; escalate only as far as factorisation demands
    ridge = RIDGE_REL * max(np.trace(G) / max(len(G), 1), 1.0)
    last_exc = None
    for _ in range(8):
        try:
            return cho_factor(H0 + ridge * np.eye(len(G)), lower=True)
        except np.linalg.LinAlgError as exc:
            last_exc = exc
            ridge *= 100.0
    raise NumericalError(f"spline term system not positive definite: {last_exc}")


def _gcv_lambda(B: np.ndarray, P: np.ndarray, resid: np.ndarray, grid) -> float:
    """Single-term GCV: n RSS / (n - df)^2 with df = tr(smoother) + 1."""
    n = len(resid)
    best_lam, best_score = float(grid[0]), np.inf
    for lam in grid:
        factor = _penalised_factor(B, P, float(lam))
        coef = cho_solve(factor, B.T @ resid)
        fitted = B @ coef
        rss = float(np.sum((resid - fitted) ** 2))
        df = float(np.sum(B * cho_solve(factor, B.T).T)) + 1.0
        if df >= n:
            continue
        score = n * rss / (n - df) ** 2
        if score < best_score:
            best_score, best_lam = score, float(lam)
    return best_lam


def fit_gam(X, y, params: dict, rng=None) -> GamModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    grid = params["lambda_grid"]
    if grid is None:
        grid = np.logspace(-4.0, 4.0, 13)

    intercept = float(y.mean())
    resid0 = y - intercept
    terms, bases, factors = [], [], []
    for j in range(m):
        term = _term_scaffold(X[:, j], params["n_splines"], f"#{j}")
        B = term.basis(X[:, j])
        if term.kind == "spline":
            P = _curvature_penalty(term.knots)
            term.lam = _gcv_lambda(B, P, resid0, grid)
        else:
            P = np.zeros((B.shape[1], B.shape[1]))
        terms.append(term)
        bases.append(B)
        factors.append(_penalised_factor(B, P, term.lam) if B.shape[1] else None)

    # backfitting with the per-term smoothers frozen
    fitted = [np.zeros(n) for _ in range(m)]
    scale = float(y.std()) + 1e-12
    n_iter, converged = 0, False
    total = np.zeros(n)
    for n_iter in range(1, params["max_backfit"] + 1):
        shift = 0.0
        for j in range(m):
            if factors[j] is None:
                continue
            partial = y - intercept - (total - fitted[j])
            coef = cho_solve(factors[j], bases[j].T @ partial)
            new = bases[j] @ coef
            shift = max(shift, float(np.abs(new - fitted[j]).max()))
            total += new - fitted[j]
            fitted[j] = new
            terms[j].coef = coef
        if shift <= params["tol"] * scale:
            converged = True
            break

    return GamModel(intercept=intercept, terms=terms,
                    meta={"n_iter": n_iter, "converged": converged})
