"""Scikit-learn estimator facade."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.utils.validation import check_is_fitted

from mgcp.estimators import MGCPRegressor


def make_data(rng):
    xs = np.linspace(0, 4, 20)[:, None]
    f = np.sin(1.3 * xs[:, 0])
    sources = [(xs, f + rng.normal(0, 0.05, 20))]
    xt = np.linspace(0, 4, 10)[:, None]
    yt = np.sin(1.3 * xt[:, 0]) + rng.normal(0, 0.05, 10)
    return sources, xt, yt


class TestEstimatorProtocol:
    def test_get_set_params_and_clone(self):
        est = MGCPRegressor(gamma=1.5, restarts=2)
        params = est.get_params()
        assert params["gamma"] == 1.5
        cloned = clone(est)
        assert cloned.get_params() == params

    def test_fit_predict_shapes(self, rng):
        sources, xt, yt = make_data(rng)
        est = MGCPRegressor(gamma=1.0, restarts=2, max_iterations=150, random_state=0)
        est.fit(xt, yt, sources=sources)
        check_is_fitted(est)
        pred = est.predict(xt)
        assert pred.shape == (10,)
        mean, std = est.predict(xt, return_std=True)
        np.testing.assert_array_equal(mean, pred)
        assert np.all(std >= 0)

    def test_no_sources_is_single_output_gp(self, rng):
        _, xt, yt = make_data(rng)
        est = MGCPRegressor(gamma=0.0, restarts=2, max_iterations=200, random_state=0)
        est.fit(xt, yt)
        assert est.selected_sources_ == ()
        assert est.score(xt, yt) > 0.8

    def test_selected_sources_attribute(self, rng):
        sources, xt, yt = make_data(rng)
        noise_source = (sources[0][0], rng.normal(0, 1, 20))
        est = MGCPRegressor(
            gamma=2.0, restarts=4, max_iterations=400, random_state=1
        )
        est.fit(xt, yt, sources=sources + [noise_source])
        assert 0 in est.selected_sources_

    def test_feature_count_checked(self, rng):
        sources, xt, yt = make_data(rng)
        est = MGCPRegressor(restarts=1, max_iterations=60).fit(xt, yt, sources=sources)
        with pytest.raises(ValueError):
            est.predict(np.zeros((3, 2)))

    def test_rejects_bad_y(self):
        est = MGCPRegressor(restarts=1)
        with pytest.raises(ValueError):
            est.fit([[0.0], [1.0]], [1.0])  # length mismatch

    def test_deterministic_with_random_state(self, rng):
        sources, xt, yt = make_data(rng)
        a = MGCPRegressor(gamma=0.5, restarts=2, max_iterations=100, random_state=7)
        b = MGCPRegressor(gamma=0.5, restarts=2, max_iterations=100, random_state=7)
        pa = a.fit(xt, yt, sources=sources).predict(xt)
        pb = b.fit(xt, yt, sources=sources).predict(xt)
        np.testing.assert_array_equal(pa, pb)

    def test_include_noise_widens_std(self, rng):
        sources, xt, yt = make_data(rng)
        base = MGCPRegressor(restarts=1, max_iterations=100, random_state=0)
        noisy = MGCPRegressor(
            restarts=1, max_iterations=100, random_state=0, include_noise=True
        )
        _, s0 = base.fit(xt, yt, sources=sources).predict(xt, return_std=True)
        _, s1 = noisy.fit(xt, yt, sources=sources).predict(xt, return_std=True)
        assert np.all(s1 >= s0)
