"""Survey ingestion, empirical-logit transform, and design-matrix assembly.

File formats
------------
Survey CSV: header ``lon,lat,t,n_tested,n_positive``, UTF-8, ``.`` decimal
separator, one record per line. The response is recomputed on load, so
``load_surveys(save_surveys(records))`` is the identity.

Covariate stack manifest (YAML)::

    covariates:
      - name: elevation
        kind: static                 # static | synoptic | dynamic-monthly | dynamic-annual
        grid: {lon0: 30.0, lat0: -1.0, d_lon: 0.05, d_lat: 0.05, n_lon: 24, n_lat: 24}
        path: grids/elevation.csv
      - name: evi
        kind: dynamic-monthly
        grid: {...}
        t_start: 0
        t_end: 23                    # inclusive month index range
        path_template: grids/evi_{t}.csv

Grid file: plain CSV of n_lat rows x n_lon columns of reals, row 0 being the
northernmost row; ``lon0``/``lat0`` are the centre of the north-west cell.
Paths are resolved relative to the manifest file. Dynamic-annual covariates
store one slice per 12-month block from ``t_start``; ``{t}`` in their
``path_template`` is the block index.

Assembly expands every dynamic-monthly covariate into lagged columns at 0, 2,
4 and 6 months; static, synoptic and dynamic-annual covariates contribute one
column each. Lookups are nearest-cell (round-half-even on the fractional cell
coordinate), no interpolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import DataError, SchemaError

EMPIRICAL_LOGIT_C = 0.5
MONTHLY_LAGS = (0, 2, 4, 6)
KINDS = ("static", "synoptic", "dynamic-monthly", "dynamic-annual")
SURVEY_HEADER = ["lon", "lat", "t", "n_tested", "n_positive"]


def empirical_logit(n_positive: int, n_tested: int) -> float:
    """log((k + c) / (n - k + c)) with continuity correction c = 0.5.

    Finite for all legal counts, including k = 0 and k = n.
    """
    if n_tested < 1:
        raise DataError(f"n_tested must be >= 1, got {n_tested}")
    if not 0 <= n_positive <= n_tested:
        raise DataError(f"n_positive must be in [0, n_tested], got {n_positive} of {n_tested}")
    c = EMPIRICAL_LOGIT_C
    return math.log((n_positive + c) / (n_tested - n_positive + c))


@dataclass(frozen=True)
class SurveyRecord:
    """One prevalence observation with its empirical-logit response."""

    lon: float
    lat: float
    t: int
    n_tested: int
    n_positive: int
    y: float

    @classmethod
    def from_counts(cls, lon: float, lat: float, t: int, n_tested: int, n_positive: int) -> "SurveyRecord":
        if t < 0:
            raise DataError(f"month index must be >= 0, got {t}")
        return cls(float(lon), float(lat), int(t), int(n_tested), int(n_positive),
                   empirical_logit(n_positive, n_tested))


def load_surveys(path) -> list[SurveyRecord]:
    """Read a survey CSV; errors cite the 1-based line number."""
    path = Path(path)
    records: list[SurveyRecord] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, expected header {','.join(SURVEY_HEADER)}")
        if [h.strip() for h in header] != SURVEY_HEADER:
            raise SchemaError(f"{path}: bad header {header!r}, expected {SURVEY_HEADER}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 5:
                raise DataError(f"{path}:{lineno}: expected 5 fields, got {len(row)}")
            try:
                lon, lat = float(row[0]), float(row[1])
                t, n_tested, n_positive = int(row[2]), int(row[3]), int(row[4])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            try:
                records.append(SurveyRecord.from_counts(lon, lat, t, n_tested, n_positive))
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return records


def save_surveys(records, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SURVEY_HEADER)
        for r in records:
            writer.writerow([repr(r.lon), repr(r.lat), r.t, r.n_tested, r.n_positive])


@dataclass(frozen=True)
class GridGeometry:
    """Regular lon/lat lattice; (lon0, lat0) is the north-west cell centre."""

    lon0: float
    lat0: float
    d_lon: float
    d_lat: float
    n_lon: int
    n_lat: int

    def __post_init__(self):
        if self.n_lon < 1 or self.n_lat < 1 or self.d_lon <= 0 or self.d_lat <= 0:
            raise DataError(f"invalid grid geometry {self}")

    def cell_index(self, lon: float, lat: float) -> tuple[int, int]:
        """Nearest cell as (row, col); raises when outside the extent."""
        col = int(np.rint((lon - self.lon0) / self.d_lon))
        row = int(np.rint((self.lat0 - lat) / self.d_lat))
        if not (0 <= col < self.n_lon and 0 <= row < self.n_lat):
            raise DataError(f"point ({lon}, {lat}) outside grid extent")
        return row, col

    def cell_center(self, row: int, col: int) -> tuple[float, float]:
        return self.lon0 + col * self.d_lon, self.lat0 - row * self.d_lat

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """All centres, row-major (north to south, west to east)."""
        lons = self.lon0 + np.arange(self.n_lon) * self.d_lon
        lats = self.lat0 - np.arange(self.n_lat) * self.d_lat
        glon, glat = np.meshgrid(lons, lats)
        return glon.ravel(), glat.ravel()


def load_grid_csv(path, geometry: GridGeometry) -> np.ndarray:
    values = np.loadtxt(path, delimiter=",", dtype=float, ndmin=2)
    if values.shape != (geometry.n_lat, geometry.n_lon):
        raise SchemaError(f"{path}: grid shape {values.shape} does not match geometry "
                          f"({geometry.n_lat}, {geometry.n_lon})")
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: grid contains non-finite values")
    return values


def save_grid_csv(values: np.ndarray, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in np.asarray(values, dtype=float):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


@dataclass(frozen=True)
class Covariate:
    """One covariate source: geometry plus per-time-slice grids."""

    name: str
    kind: str
    geometry: GridGeometry
    slices: dict = field(repr=False)   # slice index -> (n_lat, n_lon) array; static uses {0: ...}
    t_start: int = 0
    t_end: int = 0

    def slice_for_month(self, t: int) -> np.ndarray:
        if self.kind in ("static", "synoptic"):
            return self.slices[0]
        if t < self.t_start or t > self.t_end:
            raise DataError(f"covariate '{self.name}': month {t} outside [{self.t_start}, {self.t_end}]")
        if self.kind == "dynamic-monthly":
            return self.slices[t - self.t_start]
        return self.slices[(t - self.t_start) // 12]   # dynamic-annual

    def value_at(self, lon: float, lat: float, t: int) -> float:
        row, col = self.geometry.cell_index(lon, lat)
        return float(self.slice_for_month(t)[row, col])


def load_stack_manifest(path) -> list[Covariate]:
    """Load every covariate referenced by a stack manifest; fails loudly on gaps."""
    path = Path(path)
    try:
        spec = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise DataError(f"{path}: cannot parse manifest: {exc}") from exc
    if not isinstance(spec, dict) or "covariates" not in spec:
        raise SchemaError(f"{path}: manifest must be a mapping with a 'covariates' list")
    base = path.parent
    covariates = []
    seen = set()
    for entry in spec["covariates"]:
        name = entry.get("name")
        kind = entry.get("kind")
        if not name or kind not in KINDS:
            raise SchemaError(f"{path}: covariate entry needs a name and kind in {KINDS}, got {entry!r}")
        if name in seen:
            raise SchemaError(f"{path}: duplicate covariate name '{name}'")
        seen.add(name)
        try:
            geometry = GridGeometry(**entry["grid"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"{path}: covariate '{name}': bad grid geometry: {exc}") from exc
        if kind in ("static", "synoptic"):
            values = load_grid_csv(base / entry["path"], geometry)
            covariates.append(Covariate(name, kind, geometry, {0: values}))
            continue
        t_start, t_end = int(entry["t_start"]), int(entry["t_end"])
        if t_end < t_start:
            raise SchemaError(f"{path}: covariate '{name}': t_end < t_start")
        template = entry["path_template"]
        n_slices = (t_end - t_start + 1) if kind == "dynamic-monthly" else (t_end - t_start) // 12 + 1
        slices = {}
        for s in range(n_slices):
            slices[s] = load_grid_csv(base / template.format(t=s), geometry)
        covariates.append(Covariate(name, kind, geometry, slices, t_start, t_end))
    if not covariates:
        raise SchemaError(f"{path}: manifest lists no covariates")
    return covariates


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    lag_months: int
    kind: str

    @property
    def label(self) -> str:
        return self.name if self.lag_months == 0 else f"{self.name}_lag{self.lag_months}"


@dataclass(frozen=True)
class CovariateMatrix:
    """Aligned n x m design matrix; row i corresponds to observation i."""

    values: np.ndarray
    columns: tuple[ColumnInfo, ...]

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.ndim != 2 or v.shape[1] != len(self.columns):
            raise DataError(f"design matrix shape {v.shape} does not match {len(self.columns)} columns")
        if not np.all(np.isfinite(v)):
            raise DataError("design matrix contains non-finite values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def n_rows(self) -> int:
        return self.values.shape[0]

    @property
    def n_cols(self) -> int:
        return self.values.shape[1]

    def labels(self) -> list[str]:
        return [c.label for c in self.columns]

    def check_layout(self, other: "CovariateMatrix") -> None:
        """Raise SchemaError listing missing/extra columns when layouts differ."""
        if self.columns == other.columns:
            return
        mine = {c.label for c in self.columns}
        theirs = {c.label for c in other.columns}
        missing = sorted(mine - theirs)
        extra = sorted(theirs - mine)
        if missing or extra:
            raise SchemaError(f"column layout mismatch: missing {missing}, extra {extra}")
        raise SchemaError("column layout mismatch: same labels, different order or metadata")


def design_columns(covariates) -> list[tuple[ColumnInfo, "Covariate"]]:
    cols = []
    for cov in covariates:
        if cov.kind == "dynamic-monthly":
            for lag in MONTHLY_LAGS:
                cols.append((ColumnInfo(cov.name, lag, cov.kind), cov))
        else:
            cols.append((ColumnInfo(cov.name, 0, cov.kind), cov))
    return cols


def assemble_at(points, covariates) -> CovariateMatrix:
    """Assemble the design at arbitrary (lon, lat, t) points.

    points: iterable of (lon, lat, t) triples.
    """
    cols = design_columns(covariates)
    points = list(points)
    values = np.empty((len(points), len(cols)))
    for j, (info, cov) in enumerate(cols):
        for i, (lon, lat, t) in enumerate(points):
            t_eff = int(t) - info.lag_months
            if t_eff < 0:
                raise DataError(f"row {i}: covariate '{info.label}' needs month {t_eff} < 0")
            try:
                values[i, j] = cov.value_at(lon, lat, t_eff)
            except DataError as exc:
                raise DataError(f"row {i}: covariate '{info.label}': {exc}") from exc
    return CovariateMatrix(values=values, columns=tuple(info for info, _ in cols))


def assemble_design(surveys, stack) -> CovariateMatrix:
    """Assemble the survey design matrix from a manifest path or loaded stack."""
    covariates = load_stack_manifest(stack) if isinstance(stack, (str, Path)) else list(stack)
    return assemble_at([(r.lon, r.lat, r.t) for r in surveys], covariates)


@dataclass(frozen=True)
class PredictionGrid:
    """Prediction lattice at one month with per-cell covariate vectors."""

    geometry: GridGeometry
    t: int
    design: CovariateMatrix

    @property
    def n_cells(self) -> int:
        return self.geometry.n_lon * self.geometry.n_lat

    def cell_points(self) -> list[tuple[float, float, int]]:
        lons, lats = self.geometry.cell_centers()
        return [(float(lo), float(la), self.t) for lo, la in zip(lons, lats)]


def build_prediction_grid(geometry: GridGeometry, t: int, stack) -> PredictionGrid:
    covariates = load_stack_manifest(stack) if isinstance(stack, (str, Path)) else list(stack)
    lons, lats = geometry.cell_centers()
    design = assemble_at([(float(lo), float(la), t) for lo, la in zip(lons, lats)], covariates)
    return PredictionGrid(geometry=geometry, t=t, design=design)
