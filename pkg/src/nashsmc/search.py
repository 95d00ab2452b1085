"""Best candidate for a symmetric relaxed Nash equilibrium.

A strategy ``p`` is a ``delta``-relaxed equilibrium when
``U(p, p) >= delta * U(p', p)`` for every deviation ``p'``. The search
estimates all diagonal utilities first, then repeatedly estimates a random
unexplored pair ``(p_i, p_k)`` whose column strategy ``p_k`` is still
waiting. ``p_k`` is dropped as soon as ``U(p_k, p_k) < d * U(p_i, p_k)`` and
becomes a candidate once every deviation against it has been estimated.
The winner maximizes the worst ratio ``U(p, p) / U(p', p)`` over deviations.

When one strategy is left waiting, its remaining deviations are estimated
(still subject to the threshold) and it is promoted if it survives, so a
clearly best last strategy is not lost.

A ratio with a zero denominator is ``+inf``: nothing can be gained by
deviating against a profile where the deviation never succeeds.
"""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .estimation import EstimationCache, UtilityEstimate, as_source, cache_get_or_estimate

# (p_deviant, p_common) -> estimate
Estimator = Callable[[object, object], UtilityEstimate]
# batch form used to estimate the diagonal in one go
BatchEstimator = Callable[[Sequence[tuple]], list]


def ratio(u_diag: float, u_dev: float) -> float:
    if u_dev == 0.0:
        return math.inf
    return u_diag / u_dev


@dataclass
class SearchState:
    waiting: list
    candidates: list = field(default_factory=list)
    explored: set = field(default_factory=set)
    threshold: float = 0.9
    # pruned strategy -> (witness deviation, witness ratio)
    pruned: dict = field(default_factory=dict)
    order: list = field(default_factory=list)  # pairs in estimation order

    def check(self) -> None:
        assert not set(self.waiting) & set(self.candidates)


@dataclass(frozen=True)
class CandidateResult:
    strategy: object
    worst_ratio: float
    worst_deviation: object
    # candidate -> {deviation: ratio}
    ratios: dict
    candidates: tuple
    pruned: dict
    pairs_estimated: int
    estimates: dict  # (p', p) -> UtilityEstimate

    @property
    def found(self) -> bool:
        return True


@dataclass(frozen=True)
class NoCandidate:
    """Every strategy was dropped by the threshold."""

    threshold: float
    pruned: dict
    pairs_estimated: int
    estimates: dict

    @property
    def found(self) -> bool:
        return False

    @property
    def retry_threshold(self) -> float:
        return self.threshold / 2


def _check_threshold(d: float) -> None:
    if not (isinstance(d, (int, float)) and 0.0 <= d <= 1.0):
        raise ValueError(f"threshold d must lie in [0, 1], got {d!r}")


def _best(values, estimates: dict, candidates: Sequence) -> tuple:
    """Argmax of the worst ratio; ties go to the earliest strategy."""
    table = {}
    best = None
    for p in values:
        if p not in candidates:
            continue
        u_pp = estimates[(p, p)].estimate()
        row = {q: ratio(u_pp, estimates[(q, p)].estimate()) for q in values}
        table[p] = row
        worst_q = min(values, key=lambda q: row[q])
        if best is None or row[worst_q] > best[1]:
            best = (p, row[worst_q], worst_q)
    return best, table


def cached_estimator(source, cache: EstimationCache, n: int, phase: int = 1) -> Estimator:
    src = as_source(source)

    def get(p_dev, p_common) -> UtilityEstimate:
        return cache_get_or_estimate(cache, src, p_dev, p_common, n, phase=phase)

    return get


def find_candidate(
    strategies,
    estimate: Estimator,
    d: float = 0.9,
    seed: int = 0,
    estimate_many: BatchEstimator | None = None,
) -> CandidateResult | NoCandidate:
    """Search with threshold ``d``; ``estimate(p', p)`` supplies utilities.

    ``estimate_many`` (optional) computes a list of pairs at once; it is only
    used for the diagonal, which is needed in full before the loop starts.
    """
    _check_threshold(d)
    values = list(strategies)
    if not values:
        raise ValueError("empty strategy space")
    rng = random.Random(seed)
    state = SearchState(waiting=list(values), threshold=d)
    est: dict = {}

    diag = [(p, p) for p in values]
    results = estimate_many(diag) if estimate_many else [estimate(*pq) for pq in diag]
    for pq, e in zip(diag, results):
        est[pq] = e
        state.explored.add(pq)
        state.order.append(pq)

    def visit(pi, pk) -> bool:
        """Estimate (pi, pk); returns False if pk got pruned."""
        e = estimate(pi, pk)
        est[(pi, pk)] = e
        state.explored.add((pi, pk))
        state.order.append((pi, pk))
        u_kk = est[(pk, pk)].estimate()
        u_ik = e.estimate()
        if u_kk < d * u_ik:
            state.waiting.remove(pk)
            state.pruned[pk] = (pi, ratio(u_kk, u_ik))
            return False
        return True

    def row_complete(pk) -> bool:
        return all((pi, pk) in state.explored for pi in values)

    while len(state.waiting) > 1:
        pool = [(pi, pk) for pk in state.waiting for pi in values if (pi, pk) not in state.explored]
        pi, pk = pool[rng.randrange(len(pool))]
        if visit(pi, pk) and row_complete(pk):
            state.waiting.remove(pk)
            state.candidates.append(pk)

    if state.waiting:
        pk = state.waiting[0]
        rest = [(pi, pk) for pi in values if (pi, pk) not in state.explored]
        rng.shuffle(rest)
        alive = True
        for pi, _ in rest:
            if not visit(pi, pk):
                alive = False
                break
        if alive:
            state.waiting.remove(pk)
            state.candidates.append(pk)
    state.check()

    if not state.candidates:
        return NoCandidate(d, dict(state.pruned), len(est), est)
    (p, worst, worst_q), table = _best(values, est, state.candidates)
    return CandidateResult(
        strategy=p,
        worst_ratio=worst,
        worst_deviation=worst_q,
        ratios=table,
        candidates=tuple(q for q in values if q in state.candidates),
        pruned=dict(state.pruned),
        pairs_estimated=len(est),
        estimates=est,
    )


def exhaustive_candidate(strategies, estimate: Estimator) -> CandidateResult:
    """Estimate every pair and return the argmax of the worst ratio."""
    values = list(strategies)
    if not values:
        raise ValueError("empty strategy space")
    est = {(q, p): estimate(q, p) for p in values for q in values}
    (p, worst, worst_q), table = _best(values, est, values)
    return CandidateResult(
        strategy=p,
        worst_ratio=worst,
        worst_deviation=worst_q,
        ratios=table,
        candidates=tuple(values),
        pruned={},
        pairs_estimated=len(est),
        estimates=est,
    )
