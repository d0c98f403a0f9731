"""Ordinary least squares with an intercept, as a level-0 learner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LinearModel:
    coef: np.ndarray
    intercept: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coef + self.intercept

    def state_dict(self) -> dict:
        return {"coef": self.coef.tolist(), "intercept": self.intercept}

    @classmethod
    def from_state(cls, state: dict) -> "LinearModel":
        return cls(coef=np.asarray(state["coef"], dtype=float),
                   intercept=float(state["intercept"]))


def fit_linear(X, y, params: dict, rng=None) -> LinearModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    A = np.column_stack([np.ones(len(y)), X])
    sol, *_ = np.linalg.lstsq(A, y, rcond=None)
    return LinearModel(coef=sol[1:], intercept=float(sol[0]))
