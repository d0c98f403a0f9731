import numpy as np
import pytest

from stackgp.dataset import (assemble_design, empirical_logit,
                             load_stack_manifest, load_surveys)
from stackgp.errors import ConfigError
from stackgp.synth import (REGIME_SHARES, ScenarioConfig, generate,
                           true_params, write_scenario)

SMALL = dict(n_surveys=60, n_lon=8, n_lat=8, n_months=8, seed=11)


class TestDeterminism:
    def test_generate_is_bit_identical(self):
        cfg = ScenarioConfig(**SMALL)
        a, b = generate(cfg), generate(cfg)
        for key in ("g", "gp", "noise", "latent", "prevalence"):
            np.testing.assert_array_equal(a.truth[key], b.truth[key])
        np.testing.assert_array_equal(a.gp_field, b.gp_field)
        np.testing.assert_array_equal(a.design.values, b.design.values)
        assert [(r.lon, r.lat, r.t, r.n_tested, r.n_positive) for r in a.records] \
            == [(r.lon, r.lat, r.t, r.n_tested, r.n_positive) for r in b.records]

    def test_written_files_are_byte_identical(self, tmp_path):
        cfg = ScenarioConfig(**SMALL)
        d1, d2 = tmp_path / "run1", tmp_path / "run2"
        write_scenario(generate(cfg), d1)
        write_scenario(generate(cfg), d2)
        files1 = sorted(p.relative_to(d1) for p in d1.rglob("*") if p.is_file())
        files2 = sorted(p.relative_to(d2) for p in d2.rglob("*") if p.is_file())
        assert files1 == files2
        for rel in files1:
            assert (d1 / rel).read_bytes() == (d2 / rel).read_bytes(), rel

    def test_different_seeds_differ(self):
        a = generate(ScenarioConfig(**{**SMALL, "seed": 1}))
        b = generate(ScenarioConfig(**{**SMALL, "seed": 2}))
        assert not np.array_equal(a.truth["latent"], b.truth["latent"])


class TestVarianceShares:
    @pytest.mark.parametrize("regime", sorted(REGIME_SHARES))
    def test_sample_variances_hit_targets_exactly(self, regime):
        cfg = ScenarioConfig(**{**SMALL, "regime": regime, "signal_variance": 1.3})
        bundle = generate(cfg)
        share_g, share_gp = REGIME_SHARES[regime]
        assert bundle.truth["g"].var() == pytest.approx(share_g * 1.3, rel=1e-12)
        assert bundle.truth["gp"].var() == pytest.approx(share_gp * 1.3, rel=1e-12)
        assert bundle.truth["g"].mean() == pytest.approx(0.0, abs=1e-12)
        assert bundle.truth["gp"].mean() == pytest.approx(0.0, abs=1e-12)

    def test_latent_identity(self):
        cfg = ScenarioConfig(**SMALL)
        bundle = generate(cfg)
        reconstructed = (cfg.intercept + bundle.truth["g"] + bundle.truth["gp"]
                         + bundle.truth["noise"])
        np.testing.assert_array_equal(bundle.truth["latent"], reconstructed)
        np.testing.assert_allclose(bundle.truth["prevalence"],
                                   1.0 / (1.0 + np.exp(-bundle.truth["latent"])),
                                   atol=1e-15)

    def test_field_lookup_matches_survey_truth(self):
        cfg = ScenarioConfig(**SMALL)
        bundle = generate(cfg)
        geo = cfg.geometry
        for k, rec in enumerate(bundle.records):
            i, j = geo.cell_index(rec.lon, rec.lat)
            assert bundle.gp_field[rec.t, i * cfg.n_lon + j] == bundle.truth["gp"][k]


class TestSurveyRealism:
    def test_record_ranges(self):
        cfg = ScenarioConfig(**SMALL)
        bundle = generate(cfg)
        geo = cfg.geometry
        lon_hi = cfg.lon0 + (cfg.n_lon - 1) * cfg.d_lon
        lat_lo = cfg.lat0 - (cfg.n_lat - 1) * cfg.d_lat
        assert len(bundle.records) == cfg.n_surveys
        for rec in bundle.records:
            assert cfg.lon0 <= rec.lon <= lon_hi
            assert lat_lo <= rec.lat <= cfg.lat0
            assert 6 <= rec.t < cfg.n_months
            assert 30 <= rec.n_tested <= 200
            assert 0 <= rec.n_positive <= rec.n_tested
        assert np.all(bundle.truth["prevalence"] > 0)
        assert np.all(bundle.truth["prevalence"] < 1)

    def test_design_columns_static_plus_lagged_dynamic(self):
        cfg = ScenarioConfig(**SMALL, m_covariates=4)
        bundle = generate(cfg)
        labels = bundle.design.labels()
        assert labels == ["cov00", "cov01",
                          "cov02", "cov02_lag2", "cov02_lag4", "cov02_lag6",
                          "cov03", "cov03_lag2", "cov03_lag4", "cov03_lag6"]

    def test_empirical_logit_tracks_latent_with_huge_samples(self):
        cfg = ScenarioConfig(n_surveys=100, n_lon=8, n_lat=8, n_months=8,
                             seed=21, intercept=0.0, noise_sd=0.0,
                             regime="covariate-heavy",
                             n_tested_range=(10**6, 10**6))
        bundle = generate(cfg)
        obs = np.array([empirical_logit(r.n_positive, r.n_tested)
                        for r in bundle.records])
        gap = np.abs(obs - bundle.truth["latent"])
        assert gap.mean() < 1e-2


class TestTemporalStructure:
    def field_lag1_corr(self, phi, seed=31):
        # huge kappa shrinks spatial correlation so cells act independently
        cfg = ScenarioConfig(n_surveys=10, n_lon=20, n_lat=20, n_months=10,
                             kappa=100.0, phi=phi, seed=seed)
        field = generate(cfg).gp_field
        a = field[:-1].ravel()
        b = field[1:].ravel()
        return float(np.corrcoef(a, b)[0, 1]), a.size

    def test_independent_months_when_phi_zero(self):
        corr, n = self.field_lag1_corr(0.0)
        assert abs(corr) < 3.0 / np.sqrt(n)

    def test_positive_phi_shows_persistence(self):
        corr, _ = self.field_lag1_corr(0.6)
        assert corr > 0.4


class TestScenarioConfigValidation:
    def test_unknown_key_rejected_by_name(self):
        with pytest.raises(ConfigError, match="mystery"):
            ScenarioConfig.from_dict({"mystery": 1})

    def test_round_trip(self):
        cfg = ScenarioConfig(**SMALL, regime="covariance-heavy")
        clone = ScenarioConfig.from_dict(cfg.to_dict())
        assert clone == cfg

    def test_bad_regime(self):
        with pytest.raises(ConfigError, match="regime"):
            ScenarioConfig(regime="mixed")

    def test_months_must_clear_max_lag(self):
        with pytest.raises(ConfigError, match="lag"):
            ScenarioConfig(n_months=6)

    def test_gp_parameter_bounds(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(phi=1.0)
        with pytest.raises(ConfigError):
            ScenarioConfig(kappa=0.0)

    def test_tested_range_ordering(self):
        with pytest.raises(ConfigError):
            ScenarioConfig(n_tested_range=(50, 10))


class TestPersistence:
    def test_round_trip_through_files(self, tmp_path):
        cfg = ScenarioConfig(**SMALL)
        bundle = generate(cfg)
        paths = write_scenario(bundle, tmp_path)
        records = load_surveys(paths["surveys"])
        stack = load_stack_manifest(paths["manifest"])
        design = assemble_design(records, stack)
        np.testing.assert_array_equal(design.values, bundle.design.values)
        assert design.labels() == bundle.design.labels()
        assert [(r.lon, r.lat, r.t) for r in records] \
            == [(r.lon, r.lat, r.t) for r in bundle.records]

    def test_truth_csv_schema_and_exact_floats(self, tmp_path):
        cfg = ScenarioConfig(**SMALL)
        bundle = generate(cfg)
        paths = write_scenario(bundle, tmp_path)
        lines = paths["truth"].read_text().splitlines()
        assert lines[0] == "lon,lat,t,g,gp,noise,latent,prevalence"
        assert len(lines) == 1 + cfg.n_surveys
        first = lines[1].split(",")
        assert float(first[0]) == bundle.records[0].lon
        assert int(first[2]) == bundle.records[0].t
        assert float(first[6]) == bundle.truth["latent"][0]


class TestTrueParams:
    def test_effective_precision_matches_rescaling(self):
        cfg = ScenarioConfig(**SMALL)
        bundle = generate(cfg)
        params = true_params(cfg, bundle)
        marginal = bundle.meta["gp_scale"] ** 2 / cfg.tau
        assert 1.0 / params.tau == pytest.approx(marginal, rel=1e-12)
        assert params.phi == cfg.phi
        assert params.kappa == pytest.approx(cfg.kappa, rel=1e-12)
        assert params.sigma_e2 == pytest.approx(cfg.noise_sd**2, rel=1e-12)
