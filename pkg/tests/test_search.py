import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nashsmc.estimation import SyntheticGame, UtilityEstimate, estimate_utility
from nashsmc.game import StrategySpace
from nashsmc.search import NoCandidate, exhaustive_candidate, find_candidate, ratio


def exact(table, n=10**6):
    """Estimator returning the true utilities (k/n exact for these tables)."""
    def get(a, b):
        return UtilityEstimate(round(table[(a, b)] * n), n, a, b)
    return get


def sampled(matrix, seed, n=2000):
    space = StrategySpace("p", tuple(range(len(matrix))))
    g = SyntheticGame.from_matrix(space, matrix)
    memo = {}

    def get(a, b):
        if (a, b) not in memo:
            memo[(a, b)] = estimate_utility(g, a, b, n, seed)
        return memo[(a, b)]
    return list(space), get, memo


def random_matrix(rng, m):
    return rng.uniform(0.05, 0.95, size=(m, m))


def test_ratio_zero_denominator():
    assert ratio(0.3, 0.0) == math.inf and ratio(0.0, 0.0) == math.inf
    assert ratio(0.3, 0.6) == 0.5


def test_single_strategy():
    res = find_candidate([7], exact({(7, 7): 0.4}))
    assert res.strategy == 7 and res.worst_ratio == 1.0


def test_two_by_two_by_hand():
    # column 0: U(0,0)=0.6, U(1,0)=0.8 -> worst ratio 0.75
    # column 1: U(1,1)=0.5, U(0,1)=0.4 -> worst ratio 1.0
    t = {(0, 0): 0.6, (1, 0): 0.8, (1, 1): 0.5, (0, 1): 0.4}
    assert exhaustive_candidate([0, 1], exact(t)).strategy == 1
    assert find_candidate([0, 1], exact(t), d=0).strategy == 1


def test_relaxed_experiment_game():
    # deviations against p1 earn 0.5, p1 itself 0.55: worst ratio 1.1
    vals = list(range(6))
    t = {(a, b): 0.5 for a in vals for b in vals}
    t[(0, 0)] = 0.55
    res = find_candidate(vals, exact(t), d=0.9)
    assert res.strategy == 0
    assert res.worst_ratio == pytest.approx(1.0)  # includes the self-pair
    others = [r for q, r in res.ratios[0].items() if q != 0]
    assert min(others) == pytest.approx(1.1)


def test_all_pruned_gives_no_candidate():
    # a cyclic game: every strategy has a deviation worth 1.25x its diagonal
    vals = [0, 1, 2]
    t = {(a, b): 0.4 for a in vals for b in vals}
    for b in vals:
        t[((b + 1) % 3, b)] = 0.5
    res = find_candidate(vals, exact(t), d=1.0)
    assert isinstance(res, NoCandidate) and not res.found
    assert res.retry_threshold == 0.5
    assert exhaustive_candidate(vals, exact(t)).worst_ratio == pytest.approx(0.8)


def test_threshold_checked():
    with pytest.raises(ValueError):
        find_candidate([0, 1], exact({}), d=1.5)


@settings(max_examples=40)
@given(st.integers(1, 12), st.integers(0, 10**6))
def test_d_zero_equals_exhaustive(m, seed):
    mat = random_matrix(np.random.default_rng(seed), m)
    vals, get, _ = sampled(mat, seed)
    a = find_candidate(vals, get, d=0.0, seed=seed)
    b = exhaustive_candidate(vals, get)
    assert a.strategy == b.strategy and a.worst_ratio == b.worst_ratio


@settings(max_examples=40)
@given(st.integers(2, 12), st.integers(0, 10**6), st.sampled_from([0.5, 0.8, 0.9, 1.0]))
def test_pruning_sound_and_never_revisits(m, seed, d):
    mat = random_matrix(np.random.default_rng(seed), m)
    vals, get, memo = sampled(mat, seed)
    order = []

    def logged(a, b):
        order.append((a, b))
        return get(a, b)

    res = find_candidate(vals, logged, d=d, seed=seed)
    for pk, (pi, r) in res.pruned.items():
        assert r < d
        assert r == ratio(memo[(pk, pk)].estimate(), memo[(pi, pk)].estimate())
        # nothing against pk is estimated after the witness
        after = order[order.index((pi, pk)) + 1:]
        assert all(b != pk for _, b in after)


@settings(max_examples=25)
@given(st.integers(2, 10), st.integers(0, 10**6))
def test_raising_d_never_adds_candidates(m, seed):
    mat = random_matrix(np.random.default_rng(seed), m)
    vals, get, _ = sampled(mat, seed)
    sets = []
    for d in (0.0, 0.5, 0.9, 1.0):
        res = find_candidate(vals, get, d=d, seed=seed)
        sets.append(set(res.candidates) if res.found else set())
    for lo, hi in zip(sets, sets[1:]):
        assert hi <= lo


def test_deterministic_given_seed():
    mat = random_matrix(np.random.default_rng(3), 8)
    vals, get, _ = sampled(mat, 3)
    a = find_candidate(vals, get, d=0.9, seed=5)
    b = find_candidate(vals, get, d=0.9, seed=5)
    assert (a.found, getattr(a, "strategy", None), a.pairs_estimated) == \
           (b.found, getattr(b, "strategy", None), b.pairs_estimated)
