import numpy as np
import pytest

from stackgp.dataset import Covariate, GridGeometry, SurveyRecord


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_geometry(n_lon=6, n_lat=5, lon0=30.0, lat0=-1.0, d=0.1):
    return GridGeometry(lon0=lon0, lat0=lat0, d_lon=d, d_lat=d, n_lon=n_lon, n_lat=n_lat)


def make_stack(geometry=None, n_months=10, seed=5):
    """Two static surfaces plus one dynamic-monthly covariate."""
    geometry = geometry or make_geometry()
    rng = np.random.default_rng(seed)
    shape = (geometry.n_lat, geometry.n_lon)
    covs = [
        Covariate("elev", "static", geometry, {0: rng.normal(size=shape)}),
        Covariate("soil", "static", geometry, {0: rng.normal(size=shape)}),
        Covariate("rain", "dynamic-monthly", geometry,
                  {t: rng.normal(size=shape) for t in range(n_months)},
                  t_start=0, t_end=n_months - 1),
    ]
    return covs


def make_surveys(n=20, geometry=None, n_months=10, seed=11, t_min=6):
    geometry = geometry or make_geometry()
    rng = np.random.default_rng(seed)
    lon_hi = geometry.lon0 + (geometry.n_lon - 1) * geometry.d_lon
    lat_lo = geometry.lat0 - (geometry.n_lat - 1) * geometry.d_lat
    records = []
    for _ in range(n):
        n_tested = int(rng.integers(10, 100))
        records.append(SurveyRecord.from_counts(
            lon=float(rng.uniform(geometry.lon0, lon_hi)),
            lat=float(rng.uniform(lat_lo, geometry.lat0)),
            t=int(rng.integers(t_min, n_months)),
            n_tested=n_tested,
            n_positive=int(rng.integers(0, n_tested + 1)),
        ))
    return records


def points_of(records):
    return np.array([[r.lon, r.lat, r.t] for r in records])
