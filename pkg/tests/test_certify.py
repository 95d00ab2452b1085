import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erfc, erfcinv

from nashsmc.certify import (EvaluationInput, InsufficientSimulations, certify_delta, delta_cap,
                             f_delta, f_terms, synthetic_utilities, validity_experiment,
                             variance_bound_holds)
from nashsmc.estimation import UtilityEstimate


def f_mp(utils, cand, n, delta, include_self):
    """High precision sum with mpmath (independent of math.erfc)."""
    mpmath.mp.dps = 40
    up = mpmath.mpf(utils[cand])
    total = mpmath.mpf(0)
    for k, u in utils.items():
        if k == cand and not include_self:
            continue
        total += mpmath.erfc(mpmath.sqrt(n) * (up - delta * mpmath.mpf(u))) / 2
    return float(total)


utils_st = st.dictionaries(st.integers(0, 30), st.floats(0.0, 1.0), min_size=1, max_size=12)


@settings(max_examples=60)
@given(utils_st, st.integers(1, 10**6), st.floats(0, 3), st.booleans())
def test_f_against_mpmath(utils, n, delta, include_self):
    cand = next(iter(utils))
    inp = EvaluationInput(cand, utils, n, 0.05, include_self)
    expect = f_mp(utils, cand, n, delta, include_self)
    assert f_delta(inp, delta) == pytest.approx(expect, rel=1e-12, abs=1e-300)


def test_f_at_one_all_equal():
    u = {i: 0.37 for i in range(17)}
    assert abs(f_delta(EvaluationInput(0, u, 10**5, include_self=True), 1.0) - 17 / 2) < 1e-12
    assert abs(f_delta(EvaluationInput(0, u, 10**5), 1.0) - 16 / 2) < 1e-12


@given(utils_st.filter(lambda u: any(v > 0 for v in u.values())), st.integers(1, 10**5))
def test_f_nondecreasing(utils, n):
    cand = next(iter(utils))
    inp = EvaluationInput(cand, utils, n, 0.05, True)
    grid = np.linspace(0, 3, 40)
    vals = [f_delta(inp, d) for d in grid]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_single_term_closed_form():
    # one strategy, self term only: f(d) = erfc(sqrt(n) u (1 - d)) / 2 = alpha
    u, n, alpha = 0.8, 10**4, 0.05
    inp = EvaluationInput(0, {0: u}, n, alpha, include_self=True)
    expect = 1 - erfcinv(2 * alpha) / (math.sqrt(n) * u)
    assert certify_delta(inp).delta == pytest.approx(expect, abs=1e-8)


@settings(max_examples=40)
@given(st.integers(2, 60), st.floats(0.2, 0.9), st.floats(0.8, 1.2), st.integers(0, 2**31))
def test_root_against_grid_scan(m, base, true_delta, seed):
    rng = np.random.default_rng(seed)
    u = {i: float(min(1.0, max(0.0, base + rng.normal(0, 0.01)))) for i in range(m)}
    u[0] = min(1.0, base * true_delta)
    inp = EvaluationInput(0, u, 10**5, 0.05)
    try:
        res = certify_delta(inp)
    except InsufficientSimulations:
        assert f_delta(inp, 0.0) > 0.05
        return
    assert res.f_at_delta <= 0.05
    if not res.capped:
        assert abs(res.f_at_delta - 0.05) <= 1e-6
        # dense independent scan with scipy's erfc
        grid = np.linspace(max(0.0, res.delta - 1e-3), res.delta + 1e-3, 20001)
        dev = np.array([v for k, v in u.items() if k != 0])
        f = 0.5 * erfc(np.sqrt(1e5) * (u[0] - grid[:, None] * dev[None, :])).sum(axis=1)
        assert grid[f <= 0.05].max() == pytest.approx(res.delta, abs=2e-7)


def test_insufficient():
    inp = EvaluationInput(0, {0: 0.01, 1: 0.5, 2: 0.5}, 10)
    with pytest.raises(InsufficientSimulations, match="raise the number"):
        certify_delta(inp)


def test_cap_when_deviations_never_succeed():
    inp = EvaluationInput(0, {0: 0.9, 1: 0.0, 2: 0.0}, 10**4)
    res = certify_delta(inp)
    assert res.capped and res.delta == delta_cap(inp) == pytest.approx(0.9 * 10**4 + 1)


def test_terms_reported():
    inp = EvaluationInput(0, {0: 0.6, 1: 0.5, 2: 0.55}, 10**4)
    res = certify_delta(inp)
    assert set(res.terms) == {1, 2}
    assert math.fsum(res.terms.values()) == pytest.approx(res.f_at_delta)
    assert f_terms(inp, res.delta)[2] > f_terms(inp, res.delta)[1]


def test_from_estimates():
    ests = [UtilityEstimate(60, 100, 0, 0), UtilityEstimate(50, 100, 1, 0)]
    inp = EvaluationInput.from_estimates(0, ests)
    assert inp.utilities == {0: 0.6, 1: 0.5} and inp.n == 100
    with pytest.raises(ValueError):
        EvaluationInput.from_estimates(0, ests + [UtilityEstimate(5, 10, 2, 0)])
    with pytest.raises(ValueError):
        EvaluationInput.from_estimates(0, [UtilityEstimate(5, 10, 2, 1)])


@pytest.mark.parametrize("kw", [dict(n=0), dict(alpha=0.0), dict(alpha=1.0)])
def test_input_validation(kw):
    args = dict(candidate=0, utilities={0: 0.5}, n=10, alpha=0.05)
    args.update(kw)
    with pytest.raises(ValueError):
        EvaluationInput(**args)


def test_input_needs_candidate_and_probabilities():
    with pytest.raises(ValueError):
        EvaluationInput(0, {1: 0.5}, 10)
    with pytest.raises(ValueError):
        EvaluationInput(0, {0: 1.5}, 10)
    with pytest.raises(ValueError):
        EvaluationInput(0, {0: float("nan")}, 10)


def test_synthetic_utilities():
    u = synthetic_utilities(1.1, 5)
    assert u[0] == pytest.approx(0.55) and all(u[i] == 0.5 for i in range(1, 5))


def test_validity_small():
    rep = validity_experiment(1.0, strategies=20, n=20_000, trials=30, seed=2)
    assert rep.deltas.size == 30 and rep.exceedance <= 0.1
    assert rep.histogram(10)[0].sum() == 30


def test_variance_bound():
    ok, m = variance_bound_holds(0.01)
    assert ok and m == pytest.approx(0.5)
