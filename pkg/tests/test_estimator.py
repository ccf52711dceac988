import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cantorharm.core import Level
from cantorharm.estimator import CantorEquilibriumSet
from cantorharm.potential import potentials_at


@pytest.fixture(scope="module")
def fitted():
    return CantorEquilibriumSet(n_generations=8).fit()


def test_params_and_clone():
    est = CantorEquilibriumSet(a=2.0, r=0.05, n_generations=5)
    params = est.get_params()
    assert params["a"] == 2.0 and params["n_generations"] == 5
    twin = clone(est)
    assert twin.get_params() == params and twin is not est


def test_not_fitted():
    with pytest.raises(NotFittedError):
        CantorEquilibriumSet().predict([[0.0, 1.0]])


def test_predict_matches_potential(fitted):
    X = np.array([[0.0, 1.0], [0.3, -0.2], [2.0, 0.0]])
    expect = potentials_at(X[:, 0] + 1j * X[:, 1], fitted.level_) - fitted.c_
    assert np.allclose(fitted.predict(X), expect, rtol=0, atol=1e-15)
    assert fitted.transform(X).shape == (3, 1)
    assert np.all(fitted.predict(X) > 0)


def test_bad_shape(fitted):
    with pytest.raises(ValueError):
        fitted.predict(np.zeros((2, 3)))


def test_helpers(fitted):
    assert isinstance(fitted.level(4), Level) and fitted.level(4).size == 16
    assert 0.2496 <= fitted.feasibility().delta <= 0.2498
    assert fitted.trace_.all_within_budget
    w = fitted.harmonic_measure(walks=500, depth=1, level=4, seed=1)
    assert w.hits == 500
    assert fitted.ahlfors(level=6).ratio > 1


def test_control_fit():
    est = CantorEquilibriumSet(n_generations=6, calibrate=False).fit()
    assert np.all(est.params_.coefficients(3) == 1)
