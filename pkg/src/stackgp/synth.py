"""Synthetic spatio-temporal prevalence scenarios with known ground truth.

The latent logit field is

    latent(s, t) = intercept + g(X(s, t)) + z(s, t) + eps

where g is a seeded menu of linear, hinge, smooth-sine and pairwise
interaction terms over the assembled (lagged) covariate columns, z is a draw
from the separable Matern x AR(1) process on the covariate lattice, and eps
is iid Gaussian observation noise. Both structured components are centred
and rescaled on the survey sample so their variances hit the regime's target
shares exactly: covariate-heavy 0.8/0.2, covariance-heavy 0.2/0.8, balanced
0.5/0.5 (g share / GP share of `signal_variance`).

Every survey sits on the lattice: locations are drawn uniformly over the
cell-centre extent and the latent value comes from the nearest cell, so the
assembled design matrix reproduces g's inputs exactly. Surveys are binomial:
N drawn from `n_tested_range`, N+ ~ Bin(N, logistic(latent)). Months are
drawn from [6, n_months) so every lagged column stays inside the time range.

The GP draw uses the Kronecker identity: with K = K_time (x) K_space and
lower Cholesky factors L_t, L_s, the matrix F = L_t Z L_s^T for iid normal Z
has cov(F[t1,s1], F[t2,s2]) = K_time[t1,t2] * K_space[s1,s2].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from .dataset import (MONTHLY_LAGS, Covariate, CovariateMatrix, GridGeometry,
                      SurveyRecord, assemble_at, assemble_design, save_grid_csv,
                      save_surveys)
from .errors import ConfigError
from .gp import GpHyperParams, _chol_with_jitter, matern1_matrix, pairwise_planar_dist

REGIME_SHARES = {
    "covariate-heavy": (0.8, 0.2),
    "covariance-heavy": (0.2, 0.8),
    "balanced": (0.5, 0.5),
}
MAX_LAG = max(MONTHLY_LAGS)


@dataclass(frozen=True)
class ScenarioConfig:
    """Full recipe for one synthetic region; everything is seed-determined."""

    n_surveys: int = 400
    m_covariates: int = 4
    n_lon: int = 24
    n_lat: int = 24
    lon0: float = 30.0
    lat0: float = -1.0
    d_lon: float = 0.05
    d_lat: float = 0.05
    n_months: int = 18
    regime: str = "balanced"
    kappa: float = 4.0
    tau: float = 1.0
    phi: float = 0.6
    noise_sd: float = 0.3
    n_hinge: int = 2
    n_smooth: int = 2
    n_interactions: int = 2
    n_tested_range: tuple = (30, 200)
    intercept: float = -2.0
    signal_variance: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.regime not in REGIME_SHARES:
            raise ConfigError(f"regime must be one of {sorted(REGIME_SHARES)}, got {self.regime!r}")
        for key in ("n_surveys", "m_covariates", "n_lon", "n_lat", "n_months"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.n_months <= MAX_LAG:
            raise ConfigError(f"n_months must exceed the maximum lag {MAX_LAG}")
        if self.kappa <= 0 or self.tau <= 0 or not abs(self.phi) < 1:
            raise ConfigError("GP parameters need kappa > 0, tau > 0, |phi| < 1")
        if self.noise_sd < 0 or self.signal_variance <= 0:
            raise ConfigError("noise_sd must be >= 0 and signal_variance > 0")
        for count in ("n_hinge", "n_smooth", "n_interactions"):
            if getattr(self, count) < 0:
                raise ConfigError(f"{count} must be >= 0")
        lo, hi = self.n_tested_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"n_tested_range must be 1 <= lo <= hi, got {self.n_tested_range}")
        object.__setattr__(self, "n_tested_range", (int(lo), int(hi)))

    @property
    def geometry(self) -> GridGeometry:
        return GridGeometry(lon0=self.lon0, lat0=self.lat0, d_lon=self.d_lon,
                            d_lat=self.d_lat, n_lon=self.n_lon, n_lat=self.n_lat)

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown scenario key(s) {unknown}; valid keys are {sorted(known)}")
        d = dict(d)
        if "n_tested_range" in d:
            d["n_tested_range"] = tuple(d["n_tested_range"])
        return cls(**d)


@dataclass
class SynthBundle:
    """Everything generate() produced, in memory."""

    config: ScenarioConfig
    covariates: list
    records: list
    design: CovariateMatrix
    truth: dict              # per-survey arrays g, gp, noise, latent, prevalence
    gp_field: np.ndarray     # (n_months, n_space) rescaled GP draw
    meta: dict = field(default_factory=dict)


def _smooth_surface(rng: np.random.Generator, n_lat: int, n_lon: int) -> np.ndarray:
    """Seeded smooth surface: linear gradient plus a few sine waves, O(1) scale."""
    v, u = np.meshgrid(np.linspace(0.0, 1.0, n_lat), np.linspace(0.0, 1.0, n_lon),
                       indexing="ij")
    out = rng.normal() * (u - 0.5) + rng.normal() * (v - 0.5)
    for _ in range(3):
        f1, f2 = rng.uniform(0.5, 2.5, size=2)
        out += rng.normal(scale=0.7) * np.sin(2.0 * math.pi * (f1 * u + f2 * v)
                                              + rng.uniform(0.0, 2.0 * math.pi))
    return out


def _make_covariates(config: ScenarioConfig, rng: np.random.Generator) -> list:
    """Half static surfaces, half seasonal dynamic-monthly stacks."""
    geometry = config.geometry
    m = config.m_covariates
    n_static = (m + 1) // 2 if m > 1 else 1
    covariates = []
    for j in range(m):
        name = f"cov{j:02d}"
        if j < n_static:
            covariates.append(Covariate(name, "static", geometry,
                                        {0: _smooth_surface(rng, config.n_lat, config.n_lon)}))
            continue
        base = _smooth_surface(rng, config.n_lat, config.n_lon)
        amplitude = 0.5 + 0.5 * np.abs(_smooth_surface(rng, config.n_lat, config.n_lon))
        phase = math.pi * _smooth_surface(rng, config.n_lat, config.n_lon)
        slices = {}
        for t in range(config.n_months):
            slices[t] = base + amplitude * np.sin(2.0 * math.pi * t / 12.0 + phase)
        covariates.append(Covariate(name, "dynamic-monthly", geometry, slices,
                                    t_start=0, t_end=config.n_months - 1))
    return covariates


def _covariate_menu(rng: np.random.Generator, m_cols: int, config: ScenarioConfig) -> dict:
    """Seeded recipe for g: term kinds, columns, thresholds, coefficients."""
    menu = {"linear": rng.normal(size=m_cols), "hinge": [], "smooth": [], "interaction": []}
    for _ in range(config.n_hinge):
        menu["hinge"].append((int(rng.integers(m_cols)), float(rng.uniform(-0.5, 0.5)),
                              float(rng.normal(scale=1.5))))
    for _ in range(config.n_smooth):
        menu["smooth"].append((int(rng.integers(m_cols)), float(rng.uniform(0.5, 1.5)),
                               float(rng.normal(scale=1.5))))
    for _ in range(config.n_interactions):
        j, k = rng.integers(m_cols), rng.integers(m_cols)
        menu["interaction"].append((int(j), int(k), float(rng.normal())))
    return menu


def _apply_menu(menu: dict, Z: np.ndarray) -> np.ndarray:
    g = Z @ menu["linear"]
    for j, thr, c in menu["hinge"]:
        g = g + c * np.maximum(Z[:, j] - thr, 0.0)
    for j, freq, c in menu["smooth"]:
        g = g + c * np.sin(math.pi * freq * Z[:, j])
    for j, k, c in menu["interaction"]:
        g = g + c * Z[:, j] * Z[:, k]
    return g


def _gp_draw(config: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Matrix-normal draw of the separable field, (n_months, n_space)."""
    geometry = config.geometry
    lons, lats = geometry.cell_centers()
    lonlat = np.column_stack([lons, lats])
    D = pairwise_planar_dist(lonlat, lonlat, float(lats.mean()))
    K_s = matern1_matrix(D, config.kappa, config.tau)
    L_s, _ = _chol_with_jitter(K_s, "synth spatial covariance")
    t_idx = np.arange(config.n_months)
    K_t = np.power(config.phi, np.abs(t_idx[:, None] - t_idx[None, :]))
    L_t, _ = _chol_with_jitter(K_t, "synth temporal covariance")
    Z = rng.standard_normal((config.n_months, len(lons)))
    return L_t @ Z @ L_s.T


def _rescale(values: np.ndarray, target_var: float) -> tuple[np.ndarray, float]:
    """Centre on the sample and scale so the sample variance hits the target."""
    centred = values - values.mean()
    var = float(centred.var())
    if target_var == 0.0 or var < 1e-300:
        return np.zeros_like(values), 0.0
    scale = math.sqrt(target_var / var)
    return centred * scale, scale


def generate(config: ScenarioConfig) -> SynthBundle:
    """Produce one fully deterministic scenario from its config."""
    geometry = config.geometry
    rng_grid = np.random.default_rng([config.seed, 1])
    rng_sample = np.random.default_rng([config.seed, 2])
    rng_menu = np.random.default_rng([config.seed, 3])
    rng_field = np.random.default_rng([config.seed, 4])
    rng_obs = np.random.default_rng([config.seed, 5])

    covariates = _make_covariates(config, rng_grid)

    n = config.n_surveys
    lon_hi = config.lon0 + (config.n_lon - 1) * config.d_lon
    lat_lo = config.lat0 - (config.n_lat - 1) * config.d_lat
    lons = rng_sample.uniform(config.lon0, lon_hi, size=n)
    lats = rng_sample.uniform(lat_lo, config.lat0, size=n)
    months = rng_sample.integers(MAX_LAG, config.n_months, size=n)

    # snap every survey to its nearest cell so truth and design agree exactly
    cells = np.array([geometry.cell_index(lo, la) for lo, la in zip(lons, lats)])
    cell_flat = cells[:, 0] * config.n_lon + cells[:, 1]

    points = [(lo, la, int(t)) for lo, la, t in zip(lons, lats, months)]
    proto = [SurveyRecord(lon=lo, lat=la, t=int(t), n_tested=1, n_positive=0, y=0.0)
             for lo, la, t in points]
    design = assemble_design(proto, covariates)

    col_mean = design.values.mean(axis=0)
    col_sd = design.values.std(axis=0)
    col_sd[col_sd == 0] = 1.0
    Z = (design.values - col_mean) / col_sd
    menu = _covariate_menu(rng_menu, Z.shape[1], config)
    g_raw = _apply_menu(menu, Z)

    field_raw = _gp_draw(config, rng_field)
    gp_raw = field_raw[months, cell_flat]

    share_g, share_gp = REGIME_SHARES[config.regime]
    g_vals, g_scale = _rescale(g_raw, share_g * config.signal_variance)
    gp_vals, gp_scale = _rescale(gp_raw, share_gp * config.signal_variance)
    gp_field = (field_raw - gp_raw.mean()) * gp_scale

    noise = rng_obs.normal(scale=config.noise_sd, size=n) if config.noise_sd > 0 else np.zeros(n)
    latent = config.intercept + g_vals + gp_vals + noise
    prevalence = 1.0 / (1.0 + np.exp(-latent))

    lo, hi = config.n_tested_range
    n_tested = rng_obs.integers(lo, hi + 1, size=n)
    n_positive = rng_obs.binomial(n_tested, prevalence)
    records = [SurveyRecord.from_counts(lo_, la_, int(t_), int(nt), int(npos))
               for (lo_, la_, t_), nt, npos in zip(points, n_tested, n_positive)]

    truth = {"g": g_vals, "gp": gp_vals, "noise": noise,
             "latent": latent, "prevalence": prevalence}
    meta = {"menu": menu, "g_scale": g_scale, "gp_scale": gp_scale,
            "g_center": float(g_raw.mean()),
            "col_mean": col_mean, "col_sd": col_sd,
            "shares": (share_g, share_gp)}
    return SynthBundle(config=config, covariates=covariates, records=records,
                       design=design, truth=truth, gp_field=gp_field, meta=meta)


def truth_grid(bundle: SynthBundle) -> tuple[list, dict]:
    """Noise-free truth at every cell centre for months >= MAX_LAG.

    Returns (points, columns): points as (lon, lat, t) triples in row-major
    cell order per month, columns g / gp / latent / prevalence. Months below
    MAX_LAG are excluded because lagged design columns are undefined there.
    Values reuse the survey-sample centring and regime scaling, so a survey's
    snapped cell reproduces that survey's latent value minus its noise draw.
    """
    config = bundle.config
    geometry = config.geometry
    lons, lats = geometry.cell_centers()
    months = np.arange(MAX_LAG, config.n_months)
    points = [(float(lo), float(la), int(t)) for t in months
              for lo, la in zip(lons, lats)]
    design = assemble_at(points, bundle.covariates)
    Z = (design.values - bundle.meta["col_mean"]) / bundle.meta["col_sd"]
    g = (_apply_menu(bundle.meta["menu"], Z)
         - bundle.meta["g_center"]) * bundle.meta["g_scale"]
    t_col = np.repeat(months, len(lons))
    cell = np.tile(np.arange(len(lons)), len(months))
    gp_vals = bundle.gp_field[t_col, cell]
    latent = config.intercept + g + gp_vals
    prevalence = 1.0 / (1.0 + np.exp(-latent))
    return points, {"g": g, "gp": gp_vals, "latent": latent,
                    "prevalence": prevalence}


def true_params(config: ScenarioConfig, bundle: SynthBundle) -> GpHyperParams:
    """Effective GP parameters after the regime rescaling (for oracle checks)."""
    marginal = (bundle.meta["gp_scale"] ** 2) / config.tau
    tau_eff = 1.0 / marginal if marginal > 0 else 1e300
    return GpHyperParams(log_kappa=math.log(config.kappa), log_tau=math.log(tau_eff),
                         sigma_e2=max(config.noise_sd**2, 1e-12), phi=config.phi,
                         beta=np.ones(1))


def write_scenario(bundle: SynthBundle, outdir) -> dict:
    """Persist surveys, covariate stack, and truth; returns the file map."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    grids = outdir / "grids"
    grids.mkdir(exist_ok=True)

    surveys_path = outdir / "surveys.csv"
    save_surveys(bundle.records, surveys_path)

    entries = []
    for cov in bundle.covariates:
        geometry = cov.geometry
        entry = {"name": cov.name, "kind": cov.kind,
                 "grid": {"lon0": geometry.lon0, "lat0": geometry.lat0,
                          "d_lon": geometry.d_lon, "d_lat": geometry.d_lat,
                          "n_lon": geometry.n_lon, "n_lat": geometry.n_lat}}
        if cov.kind in ("static", "synoptic"):
            rel = f"grids/{cov.name}.csv"
            save_grid_csv(cov.slices[0], outdir / rel)
            entry["path"] = rel
        else:
            entry["t_start"] = cov.t_start
            entry["t_end"] = cov.t_end
            entry["path_template"] = f"grids/{cov.name}_{{t}}.csv"
            for s, values in cov.slices.items():
                save_grid_csv(values, outdir / f"grids/{cov.name}_{s}.csv")
        entries.append(entry)
    manifest_path = outdir / "stack.yaml"
    manifest_path.write_text(yaml.safe_dump({"covariates": entries}, sort_keys=False),
                             encoding="utf-8")

    truth_path = outdir / "truth.csv"
    with truth_path.open("w", encoding="utf-8") as fh:
        fh.write("lon,lat,t,g,gp,noise,latent,prevalence\n")
        for i, rec in enumerate(bundle.records):
            parts = [repr(rec.lon), repr(rec.lat), str(rec.t)]
            parts += [repr(float(bundle.truth[k][i]))
                      for k in ("g", "gp", "noise", "latent", "prevalence")]
            fh.write(",".join(parts) + "\n")

    grid_points, grid_cols = truth_grid(bundle)
    truth_grid_path = outdir / "truth-grid.csv"
    with truth_grid_path.open("w", encoding="utf-8") as fh:
        fh.write("lon,lat,t,g,gp,latent,prevalence\n")
        for i, (lon, lat, t) in enumerate(grid_points):
            parts = [repr(lon), repr(lat), str(t)]
            parts += [repr(float(grid_cols[k][i]))
                      for k in ("g", "gp", "latent", "prevalence")]
            fh.write(",".join(parts) + "\n")

    return {"surveys": surveys_path, "manifest": manifest_path,
            "truth": truth_path, "truth_grid": truth_grid_path}
