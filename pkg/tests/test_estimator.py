import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from nashsmc.estimator import NashEquilibriumSearch


def matrix():
    m = np.full((3, 3), 0.4)
    m[1, 1] = 0.7
    return m


def test_fit_matrix():
    est = NashEquilibriumSearch(n1=2000, n2=20_000, seed=3).fit(matrix())
    assert est.found_ and est.candidate_ == 1 and est.p_opt_ == 1
    assert est.delta_ > 1.5
    assert set(est.diagonal_) == {"0", "1", "2"}
    assert "1" in est.summary()


def test_named_strategies():
    est = NashEquilibriumSearch(n1=1000, n2=5000, strategies=[10, 20, 30]).fit(matrix())
    assert est.candidate_ == 20


def test_params_and_clone():
    est = NashEquilibriumSearch(d=0.5, alpha=0.01)
    assert est.get_params()["d"] == 0.5
    c = clone(est)
    assert c.get_params() == est.get_params() and c is not est
    assert est.set_params(n1=10).n1 == 10


def test_not_fitted():
    with pytest.raises(NotFittedError):
        NashEquilibriumSearch().summary()


@pytest.mark.parametrize("kw", [dict(d=2.0), dict(alpha=0.0), dict(n1=0), dict(workers=0)])
def test_bad_params(kw):
    with pytest.raises(ValueError):
        NashEquilibriumSearch(**kw).fit(matrix())


@pytest.mark.parametrize("X", [np.zeros((2, 3)), np.zeros((0, 0)), np.zeros(3)])
def test_bad_matrix(X):
    with pytest.raises(ValueError):
        NashEquilibriumSearch().fit(X)
