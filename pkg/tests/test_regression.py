"""Regression backends: exact recovery, determinism, and serialization."""
from __future__ import annotations

import numpy as np
import pytest

from checkpointer.regression import (
    BoostedTreesModel,
    LinearBackend,
    LinearModel,
    TreeBackend,
    get_backend,
    regressor_from_dict,
)


def _linear_data(rows=50, seed=3):
    rng = np.random.default_rng(seed)
    X = rng.uniform(-5.0, 5.0, size=(rows, 2))
    y = 2.0 * X[:, 0] - 3.0 * X[:, 1] + 1.0
    return X, y


class TestLinearBackend:
    def test_recovers_exact_linear_relationship(self):
        X, y = _linear_data()
        model = LinearBackend().fit(X, y)
        assert model.coef == pytest.approx((2.0, -3.0), abs=1e-6)
        assert model.intercept == pytest.approx(1.0, abs=1e-6)
        assert model.predict(X) == pytest.approx(y, abs=1e-6)

    def test_fit_is_deterministic(self):
        X, y = _linear_data()
        a = LinearBackend().fit(X, y)
        b = LinearBackend().fit(X, y)
        assert a == b

    def test_rejects_bad_shapes(self):
        with pytest.raises(ValueError):
            LinearBackend().fit(np.ones(5), np.ones(5))
        with pytest.raises(ValueError):
            LinearBackend().fit(np.ones((4, 2)), np.ones(5))

    def test_rejects_negative_ridge(self):
        with pytest.raises(ValueError):
            LinearBackend(ridge=-1.0)

    def test_collinear_features_still_fit(self):
        # A singular gram matrix must not blow up the solve.
        X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0], [4.0, 8.0]])
        y = np.array([1.0, 2.0, 3.0, 4.0])
        model = LinearBackend(ridge=0.0).fit(X, y)
        assert model.predict(X) == pytest.approx(y, abs=1e-8)

    def test_round_trip(self):
        X, y = _linear_data()
        model = LinearBackend().fit(X, y)
        clone = regressor_from_dict(model.to_dict())
        assert isinstance(clone, LinearModel)
        probe = np.array([[0.5, -1.5], [4.0, 4.0]])
        assert clone.predict(probe) == pytest.approx(model.predict(probe), abs=0)


class TestTreeBackend:
    def test_learns_step_function(self):
        X = np.linspace(0.0, 10.0, 200).reshape(-1, 1)
        y = np.where(X[:, 0] < 5.0, 1.0, 9.0)
        model = TreeBackend().fit(X, y)
        pred = model.predict(X)
        assert np.mean((pred - y) ** 2) < 0.1
        baseline = np.mean((y - y.mean()) ** 2)
        assert np.mean((pred - y) ** 2) < 0.05 * baseline

    def test_constant_target_needs_no_trees(self):
        X = np.arange(20, dtype=float).reshape(-1, 1)
        y = np.full(20, 4.2)
        model = TreeBackend().fit(X, y)
        assert model.trees == ()
        assert model.predict(X) == pytest.approx(np.full(20, 4.2))

    def test_fit_is_deterministic(self):
        rng = np.random.default_rng(8)
        X = rng.normal(size=(120, 3))
        y = np.sin(X[:, 0]) + X[:, 1] ** 2
        a = TreeBackend().fit(X, y)
        b = TreeBackend().fit(X, y)
        assert a.predict(X) == pytest.approx(b.predict(X), abs=0)

    def test_round_trip(self):
        rng = np.random.default_rng(9)
        X = rng.normal(size=(100, 2))
        y = np.abs(X[:, 0]) + X[:, 1]
        model = TreeBackend().fit(X, y)
        clone = regressor_from_dict(model.to_dict())
        assert isinstance(clone, BoostedTreesModel)
        probe = rng.normal(size=(10, 2))
        assert clone.predict(probe) == pytest.approx(model.predict(probe), abs=0)

    def test_predict_requires_matrix(self):
        model = TreeBackend().fit(np.ones((10, 1)), np.arange(10.0))
        with pytest.raises(ValueError):
            model.predict(np.ones(3))


class TestBackendRegistry:
    def test_lookup(self):
        assert isinstance(get_backend("linear"), LinearBackend)
        assert isinstance(get_backend("tree"), TreeBackend)
        tuned = get_backend("tree", n_estimators=5)
        assert tuned.n_estimators == 5

    def test_unknown_backend(self):
        with pytest.raises(ValueError, match="unknown regression backend"):
            get_backend("forest")

    def test_regressor_from_dict_rejects_unknown_kind(self):
        with pytest.raises(ValueError):
            regressor_from_dict({"kind": "mystery"})
