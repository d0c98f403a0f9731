import numpy as np
import pytest

from stackgp.learners import LearnerSpec, fit_learner
from stackgp.learners.mars import BasisFunction, HingeFactor, MarsModel, fit_mars


class TestHinges:
    def test_hinge_evaluation(self):
        up = BasisFunction((HingeFactor(var=0, sign=1, knot=2.0),))
        down = BasisFunction((HingeFactor(var=0, sign=-1, knot=3.0),))
        X = np.array([[3.0], [2.0], [1.0]])
        np.testing.assert_array_equal(up.evaluate(X), [1.0, 0.0, 0.0])
        np.testing.assert_array_equal(down.evaluate(X), [0.0, 1.0, 2.0])

    def test_product_basis(self):
        f = BasisFunction((HingeFactor(0, 1, 0.0), HingeFactor(1, 1, 0.0)))
        X = np.array([[2.0, 3.0], [2.0, -1.0], [-1.0, 3.0]])
        np.testing.assert_array_equal(f.evaluate(X), [6.0, 0.0, 0.0])

    def test_intercept_is_ones(self):
        f = BasisFunction(())
        np.testing.assert_array_equal(f.evaluate(np.zeros((4, 2))), np.ones(4))


class TestKnotRecovery:
    def test_planted_hinge_recovered(self):
        x = np.linspace(0, 1, 101)
        y = np.maximum(0.0, x - 0.5)
        model = fit_mars(x[:, None], y, LearnerSpec(kind="mars", params={
            "max_knots": 200}).params)
        spacing = x[1] - x[0]
        knots = [f.knot for func in model.functions for f in func.factors]
        assert knots, "no hinge was added"
        assert min(abs(k - 0.5) for k in knots) <= spacing + 1e-12
        mse = float(((model.predict(x[:, None]) - y) ** 2).mean())
        assert mse < 1e-8

    def test_two_additive_hinges(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-1, 1, size=(150, 2))
        y = np.maximum(0, X[:, 0] - 0.2) + 2.0 * np.maximum(0, -0.3 - X[:, 1])
        model = fit_mars(X, y, LearnerSpec(kind="mars", params={
            "max_knots": 100}).params)
        mse = float(((model.predict(X) - y) ** 2).mean())
        assert mse < 1e-6


class TestDegreeConstraint:
    def test_degree_one_has_no_products(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-1, 1, size=(120, 2))
        y = np.maximum(0, X[:, 0]) * np.maximum(0, X[:, 1]) + 0.3 * X[:, 0]
        model = fit_mars(X, y, LearnerSpec(kind="mars", params={
            "max_degree": 1}).params)
        assert all(func.degree <= 1 for func in model.functions)

    def test_degree_two_can_capture_interaction(self):
        rng = np.random.default_rng(2)
        X = rng.uniform(-1, 1, size=(200, 2))
        y = np.maximum(0, X[:, 0] - 0.1) * np.maximum(0, X[:, 1] + 0.2)
        model = fit_mars(X, y, LearnerSpec(kind="mars", params={
            "max_degree": 2, "max_knots": 60, "max_terms": 21}).params)
        assert any(func.degree == 2 for func in model.functions)
        mse = float(((model.predict(X) - y) ** 2).mean())
        assert mse < 1e-3 * float((y ** 2).mean())


class TestGcvBookkeeping:
    def test_meta_gcv_matches_recomputation(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(-1, 1, size=(90, 2))
        y = np.maximum(0, X[:, 0]) + rng.normal(size=90) * 0.2
        params = LearnerSpec(kind="mars", params={"gcv_penalty": 3.0}).params
        model = fit_mars(X, y, params)
        n = len(y)
        B = np.column_stack([f.evaluate(X) for f in model.functions])
        coef, *_ = np.linalg.lstsq(B, y, rcond=None)
        sse = float(((B @ coef - y) ** 2).sum())
        n_terms = len(model.functions)
        n_knots = len({f.knot_id for f in model.functions if f.knot_id >= 0})
        cost = n_terms + params["gcv_penalty"] * n_knots
        gcv = (sse / n) / (1.0 - cost / n) ** 2
        assert model.meta["gcv"] == pytest.approx(gcv, rel=1e-8)
        assert model.meta["sse"] == pytest.approx(sse, abs=1e-6 * max(1.0, sse))

    def test_max_terms_respected(self):
        rng = np.random.default_rng(4)
        X = rng.uniform(-1, 1, size=(150, 3))
        y = np.sin(3 * X[:, 0]) + np.cos(2 * X[:, 1]) + X[:, 2] ** 2
        for cap in (3, 7, 11):
            model = fit_mars(X, y, LearnerSpec(kind="mars", params={
                "max_terms": cap}).params)
            assert len(model.functions) <= cap

    def test_pruning_never_worse_than_intercept_only(self):
        # the backward pass always visits the intercept-only subset, so the
        # returned GCV can never exceed that baseline
        rng = np.random.default_rng(5)
        X = rng.uniform(-1, 1, size=(100, 2))
        y = np.maximum(0, X[:, 0]) + rng.normal(size=100) * 0.5
        model = fit_mars(X, y, LearnerSpec(kind="mars").params)
        n = len(y)
        sse0 = float(((y - y.mean()) ** 2).sum())
        gcv0 = (sse0 / n) / (1.0 - 1.0 / n) ** 2
        assert model.meta["gcv"] <= gcv0 + 1e-12
        assert model.meta["n_forward"] >= len(model.functions)


class TestContract:
    def test_constant_response(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(40, 2))
        model = fit_mars(X, np.full(40, 1.5), LearnerSpec(kind="mars").params)
        np.testing.assert_allclose(model.predict(X), 1.5, atol=1e-10)

    def test_round_trip(self):
        rng = np.random.default_rng(7)
        X = rng.uniform(-1, 1, size=(80, 2))
        y = np.maximum(0, X[:, 0]) - np.maximum(0, X[:, 1] - 0.3)
        model = fit_mars(X, y, LearnerSpec(kind="mars").params)
        clone = MarsModel.from_state(model.state_dict())
        Xnew = rng.uniform(-1, 1, size=(25, 2))
        np.testing.assert_array_equal(model.predict(Xnew), clone.predict(Xnew))

    def test_deterministic_via_contract(self):
        rng = np.random.default_rng(8)
        X = rng.uniform(-1, 1, size=(70, 2))
        y = rng.normal(size=70)
        spec = LearnerSpec(kind="mars")
        p1 = fit_learner(spec, X, y).predict(X)
        p2 = fit_learner(spec, X, y).predict(X)
        np.testing.assert_array_equal(p1, p2)
