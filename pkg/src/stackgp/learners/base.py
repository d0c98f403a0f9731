"""Learner registry: specs, validation, fitting, and serialisation.

A LearnerSpec is (kind, params). Params are validated strictly: unknown keys
and out-of-range values are configuration errors, not warnings, so a typo in
a run config fails before any compute happens. fit_learner dispatches to the
per-kind fit functions and wraps the result with the design-column layout it
was trained on; predict refuses a design whose columns do not line up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..dataset import ColumnInfo, CovariateMatrix
from ..errors import ConfigError, DataError, SchemaError
from .boosting import GbtModel, fit_gbt
from .elastic_net import EnetModel, fit_enet
from .forest import ForestModel, fit_rf
from .gam import GamModel, fit_gam
from .linear import LinearModel, fit_linear
from .mars import MarsModel, fit_mars


def _positive_int(lo=1):
    return lambda v: isinstance(v, int) and not isinstance(v, bool) and v >= lo

def _non_negative_int(v):
    return isinstance(v, int) and not isinstance(v, bool) and v >= 0

def _positive_real(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v > 0

def _non_negative_real(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0

def _fraction(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and 0 < v <= 1

def _optional(check):
    return lambda v: v is None or check(v)

def _lambda_grid(v):
    return v is None or (hasattr(v, "__iter__") and all(_non_negative_real(x) for x in v))


# kind -> {param: (default, validator, description)}
PARAM_SCHEMAS = {
    "gbt": {
        "n_rounds": (150, _non_negative_int, "number of boosting rounds (>= 0)"),
        "learning_rate": (0.1, _positive_real, "shrinkage per round (> 0)"),
        "max_depth": (3, _positive_int(), "tree depth limit (>= 1)"),
        "min_samples_leaf": (5, _positive_int(), "minimum rows per leaf (>= 1)"),
        "subsample_rows": (0.8, _fraction, "row fraction per round ((0, 1])"),
        "subsample_cols": (1.0, _fraction, "column fraction per round ((0, 1])"),
    },
    "rf": {
        "n_trees": (60, _positive_int(), "number of bootstrap trees (>= 1)"),
        "max_depth": (12, _optional(_positive_int()), "tree depth limit or null"),
        "min_samples_leaf": (5, _positive_int(), "minimum rows per leaf (>= 1)"),
        "max_features": (None, _optional(_positive_int()), "columns tried per split; null = ceil(m/3)"),
        "bootstrap": (True, lambda v: isinstance(v, bool), "resample rows per tree; false = identity resample"),
    },
    "enet": {
        "lambda1": (1.0, _non_negative_real, "l1 penalty weight (>= 0)"),
        "lambda2": (1.0, _non_negative_real, "l2 penalty weight (>= 0)"),
        "max_iter": (10_000, _positive_int(), "coordinate-descent sweep limit"),
        "tol": (1e-10, _positive_real, "max coefficient change to declare convergence"),
    },
    "gam": {
        "n_splines": (8, _positive_int(4), "basis functions per smooth term (>= 4)"),
        "max_backfit": (30, _positive_int(), "backfitting sweep limit"),
        "tol": (1e-8, _positive_real, "relative fitted-value change to declare convergence"),
        "lambda_grid": (None, _lambda_grid, "candidate smoothing weights; null = logspace(-4, 4, 13)"),
    },
    "mars": {
        "max_terms": (15, _positive_int(2), "basis-function cap including intercept"),
        "max_degree": (2, _positive_int(), "hinge factors per basis function"),
        "max_knots": (15, _positive_int(), "candidate knots per (parent, variable) search"),
        "gcv_penalty": (3.0, _non_negative_real, "effective parameters charged per knot"),
    },
    "linear-mean": {},
}

_FIT = {
    "gbt": fit_gbt, "rf": fit_rf, "enet": fit_enet,
    "gam": fit_gam, "mars": fit_mars, "linear-mean": fit_linear,
}
_MODEL_CLS = {
    "gbt": GbtModel, "rf": ForestModel, "enet": EnetModel,
    "gam": GamModel, "mars": MarsModel, "linear-mean": LinearModel,
}

LEARNER_KINDS = tuple(PARAM_SCHEMAS)


@dataclass(frozen=True)
class LearnerSpec:
    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if self.kind not in PARAM_SCHEMAS:
            raise ConfigError(f"unknown learner kind '{self.kind}', expected one of {sorted(PARAM_SCHEMAS)}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ConfigError(f"learner '{self.kind}': seed must be an unsigned integer, got {self.seed!r}")
        schema = PARAM_SCHEMAS[self.kind]
        unknown = sorted(set(self.params) - set(schema))
        if unknown:
            raise ConfigError(f"learner '{self.kind}': unknown parameter(s) {unknown}; "
                              f"valid keys are {sorted(schema)}")
        resolved = {}
        for key, (default, check, description) in schema.items():
            value = self.params.get(key, default)
            if not check(value):
                raise ConfigError(f"learner '{self.kind}': parameter '{key}' = {value!r} "
                                  f"is invalid ({description})")
            resolved[key] = value
        object.__setattr__(self, "params", resolved)
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed, "name": self.name}

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerSpec":
        return cls(kind=d["kind"], params=dict(d.get("params", {})),
                   seed=int(d.get("seed", 0)), name=d.get("name", ""))


@dataclass
class LearnerModel:
    spec: LearnerSpec
    model: object
    columns: tuple | None   # ColumnInfo layout captured at fit time, if known

    def predict(self, X) -> np.ndarray:
        if isinstance(X, CovariateMatrix):
            if self.columns is not None:
                CovariateMatrix(np.zeros((0, len(self.columns))), self.columns).check_layout(X)
            values = X.values
        else:
            values = np.asarray(X, dtype=float)
            if self.columns is not None and values.shape[1] != len(self.columns):
                raise SchemaError(f"learner '{self.spec.name}' was fit on {len(self.columns)} "
                                  f"columns, got {values.shape[1]}")
        return self.model.predict(values)

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "state": self.model.state_dict(),
            "columns": None if self.columns is None else
                       [[c.name, c.lag_months, c.kind] for c in self.columns],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LearnerModel":
        spec = LearnerSpec.from_dict(d["spec"])
        model = _MODEL_CLS[spec.kind].from_state(d["state"])
        columns = d.get("columns")
        if columns is not None:
            columns = tuple(ColumnInfo(str(n), int(lag), str(k)) for n, lag, k in columns)
        return cls(spec=spec, model=model, columns=columns)


def fit_learner(spec: LearnerSpec, X, y, rng=None) -> LearnerModel:
    """Fit one learner; rng may be a Generator, a seed, or None (spec.seed)."""
    if isinstance(X, CovariateMatrix):
        columns, values = X.columns, X.values
    else:
        columns, values = None, np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if values.ndim != 2 or len(y) != values.shape[0]:
        raise SchemaError(f"design/response shapes do not align: {values.shape} vs {y.shape}")
    if len(y) == 0:
        raise SchemaError("cannot fit a learner on zero rows")
    if not (np.all(np.isfinite(values)) and np.all(np.isfinite(y))):
        raise DataError(f"learner '{spec.name}': design or response contains non-finite values")
    if spec.kind == "gbt" and len(y) < 2:
        raise DataError("gbt requires at least 2 rows")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(spec.seed if rng is None else rng)
    model = _FIT[spec.kind](values, y, spec.params, rng)
    return LearnerModel(spec=spec, model=model, columns=columns)
