"""Multivariate adaptive regression splines.

Forward pass: starting from the intercept, repeatedly add the mirrored hinge
pair parent * (x_v - t)_+ and parent * (t - x_v)_+ whose joint addition most
reduces the training SSE. The reduction is exact, not approximate: candidate
columns are orthogonalised against the current basis (via its QR factors) and
the pair's contribution comes from a 2x2 normal solve, vectorised over all
candidate knots of a (parent, variable) combination. Knots are drawn from the
observed values where the parent is active, thinned to max_knots per search.

Backward pass: greedily delete the basis function whose removal costs the
least SSE, tracking generalised cross-validation

    GCV = (SSE / n) / (1 - C / n)^2,  C = n_terms + penalty * n_knots

and return the subset with the lowest GCV, refit by least squares.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

REDUCTION_EPS = 1e-10   # relative floor for a worthwhile forward step
COL_EPS = 1e-10         # relative norm below which a column is in-span


@dataclass(frozen=True)
class HingeFactor:
    var: int
    sign: int      # +1 keeps (x - knot)_+, -1 keeps (knot - x)_+
    knot: float


@dataclass(frozen=True)
class BasisFunction:
    factors: tuple   # empty tuple is the intercept
    knot_id: int = -1

    @property
    def degree(self) -> int:
        return len(self.factors)

    def involves(self, var: int) -> bool:
        return any(f.var == var for f in self.factors)

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        out = np.ones(X.shape[0])
        for f in self.factors:
            out *= np.maximum((X[:, f.var] - f.knot) * f.sign, 0.0)
        return out


@dataclass
class MarsModel:
    functions: list
    coef: np.ndarray
    meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[0])
        for func, c in zip(self.functions, self.coef):
            out += c * func.evaluate(X)
        return out

    def state_dict(self) -> dict:
        return {
            "functions": [[[f.var, f.sign, f.knot] for f in func.factors]
                          for func in self.functions],
            "coef": self.coef.tolist(),
        }

    @classmethod
    def from_state(cls, state: dict) -> "MarsModel":
        funcs = [BasisFunction(tuple(HingeFactor(int(v), int(s), float(k)) for v, s, k in factors))
                 for factors in state["functions"]]
        return cls(functions=funcs, coef=np.asarray(state["coef"], dtype=float))


def _candidate_knots(x_active: np.ndarray, max_knots: int) -> np.ndarray:
    """Thinned unique values; the maximum is dropped so (x - t)_+ is live."""
    uniq = np.unique(x_active)
    if uniq.size < 2:
        return np.empty(0)
    uniq = uniq[:-1]
    if uniq.size > max_knots:
        pick = np.unique(np.round(np.linspace(0, uniq.size - 1, max_knots)).astype(int))
        uniq = uniq[pick]
    return uniq


def _pair_reductions(parent_col, x, knots, Q, resid):
    """Exact SSE reduction from adding each mirrored hinge pair.

    Returns (reductions, pos_live, neg_live) arrays over the knots.
    """
    pos = parent_col[:, None] * np.maximum(x[:, None] - knots[None, :], 0.0)
    neg = parent_col[:, None] * np.maximum(knots[None, :] - x[:, None], 0.0)
    raw_pos = np.einsum("ij,ij->j", pos, pos)
    raw_neg = np.einsum("ij,ij->j", neg, neg)
    pos -= Q @ (Q.T @ pos)
    neg -= Q @ (Q.T @ neg)
    a = np.einsum("ij,ij->j", pos, pos)
    b = np.einsum("ij,ij->j", neg, neg)
    c = np.einsum("ij,ij->j", pos, neg)
    gu = pos.T @ resid
    gv = neg.T @ resid
    pos_live = a > COL_EPS * np.maximum(raw_pos, 1e-300)
    neg_live = b > COL_EPS * np.maximum(raw_neg, 1e-300)
    det = a * b - c * c
    both = pos_live & neg_live & (det > 1e-12 * np.maximum(a * b, 1e-300))
    with np.errstate(divide="ignore", invalid="ignore"):
        red_pair = (b * gu**2 - 2.0 * c * gu * gv + a * gv**2) / det
        red_pos = np.where(pos_live, gu**2 / a, 0.0)
        red_neg = np.where(neg_live, gv**2 / b, 0.0)
    reductions = np.where(both, red_pair, np.maximum(red_pos, red_neg))
    return np.nan_to_num(reductions, nan=0.0, posinf=0.0, neginf=0.0), pos_live, neg_live


def fit_mars(X, y, params: dict, rng=None) -> MarsModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, m = X.shape
    max_terms = params["max_terms"]
    max_degree = params["max_degree"]
    max_knots = params["max_knots"]
    penalty = params["gcv_penalty"]

    functions = [BasisFunction(())]
    B = np.ones((n, 1))
    y_ss = float(y @ y)
    knot_count = 0

    while B.shape[1] + 1 <= max_terms:
        Q, _ = np.linalg.qr(B, mode="reduced")
        resid = y - Q @ (Q.T @ y)
        sse = float(resid @ resid)
        if sse <= 1e-12 * max(y_ss, 1.0):
            break
        best = None   # (reduction, parent_idx, var, knot, pos_live, neg_live)
        for p_idx, parent in enumerate(functions):
            if parent.degree >= max_degree:
                continue
            pcol = B[:, p_idx]
            active = pcol > 0
            if not active.any():
                continue
            for v in range(m):
                if parent.involves(v):
                    continue
                knots = _candidate_knots(X[active, v], max_knots)
                if knots.size == 0:
                    continue
                reds, pos_live, neg_live = _pair_reductions(pcol, X[:, v], knots, Q, resid)
                k = int(np.argmax(reds))
                if best is None or reds[k] > best[0]:
                    best = (float(reds[k]), p_idx, v, float(knots[k]),
                            bool(pos_live[k]), bool(neg_live[k]))
        if best is None or best[0] <= REDUCTION_EPS * max(sse, 1e-300):
            break
        _, p_idx, v, knot, pos_live, neg_live = best
        parent = functions[p_idx]
        new_cols = []
        for sign, live in ((1, pos_live), (-1, neg_live)):
            if not live:
                continue
            func = BasisFunction(parent.factors + (HingeFactor(v, sign, knot),), knot_id=knot_count)
            functions.append(func)
            new_cols.append(func.evaluate(X))
        if not new_cols:
            break
        knot_count += 1
        B = np.column_stack([B] + new_cols)

    # backward pruning on GCV
    def gcv(subset):
        cols = B[:, subset]
        coef, *_ = np.linalg.lstsq(cols, y, rcond=None)
        r = y - cols @ coef
        sse = float(r @ r)
        knots_used = {functions[i].knot_id for i in subset if functions[i].knot_id >= 0}
        c_eff = len(subset) + penalty * len(knots_used)
        if c_eff >= n:
            return np.inf, coef, sse
        return (sse / n) / (1.0 - c_eff / n) ** 2, coef, sse

    subset = list(range(len(functions)))
    best_gcv, best_coef, best_sse = gcv(subset)
    best_subset = list(subset)
    while len(subset) > 1:
        trial_sse, trial_idx = np.inf, None
        for i in subset[1:]:   # never drop the intercept
            remaining = [j for j in subset if j != i]
            cols = B[:, remaining]
            coef, *_ = np.linalg.lstsq(cols, y, rcond=None)
            r = y - cols @ coef
            sse = float(r @ r)
            if sse < trial_sse:
                trial_sse, trial_idx = sse, i
        subset = [j for j in subset if j != trial_idx]
        g, coef, sse = gcv(subset)
        if g < best_gcv:
            best_gcv, best_coef, best_subset, best_sse = g, coef, list(subset), sse

    final_funcs = [functions[i] for i in best_subset]
    return MarsModel(functions=final_funcs, coef=np.asarray(best_coef, dtype=float),
                     meta={"gcv": float(best_gcv), "sse": float(best_sse),
                           "n_forward": len(functions)})
