"""Statistical certification of a relaxed equilibrium.

Given fresh estimates ``u_i = U~(p_i, p)`` for every strategy ``p_i`` (all
from ``n`` runs) and ``u_p = U~(p, p)``, define

    f(delta) = sum_i 1/2 * erfc( sqrt(n) * (u_p - delta * u_i) ).

By default the sum runs over the deviations ``p_i != p``. The candidate's own
term equals ``1/2 * erfc(sqrt(n) * u_p * (1 - delta))``, which is at least
1/2 for ``delta >= 1``; keeping it (``include_self=True``) caps every
certificate below 1, so an equilibrium that beats all deviations by a
margin could never be certified as such.

Under the normal approximation of the estimates, ``f(delta)`` bounds the
probability of accepting "p is a delta-relaxed equilibrium" when it is
false, so the hypothesis is accepted at level ``alpha`` whenever
``f(delta) <= alpha``. ``f`` is nondecreasing in ``delta`` (strictly
increasing as soon as some ``u_i > 0``), so the certified value is the
largest ``delta`` with ``f(delta) <= alpha``, found by bracketing with
integers and bisecting.

``1/2 * erfc(x)`` equals ``1/2 * (1 - erf(x))`` but keeps full relative
accuracy in the tail where ``erf(x)`` rounds to 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .estimation import UtilityEstimate


class InsufficientSimulations(ValueError):
    """``f(0) > alpha``: no ``delta >= 0`` can be certified with this ``n``."""


@dataclass(frozen=True)
class EvaluationInput:
    candidate: object
    # deviation -> estimated utility U~(p_i, p); must include the candidate
    utilities: Mapping
    n: int
    alpha: float = 0.05
    include_self: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.candidate not in self.utilities:
            raise ValueError("utilities must include the candidate's own utility")
        for k, u in self.utilities.items():
            if not (isinstance(u, (int, float)) and math.isfinite(u)):
                raise ValueError(f"utility of {k!r} is not a finite number: {u!r}")
            if not 0.0 <= u <= 1.0:
                raise ValueError(f"utility of {k!r} outside [0, 1]: {u}")

    @classmethod
    def from_estimates(cls, candidate, estimates, alpha: float = 0.05,
                       include_self: bool = False) -> "EvaluationInput":
        """Build from :class:`UtilityEstimate` objects that share one ``n``."""
        ests = list(estimates.values()) if isinstance(estimates, Mapping) else list(estimates)
        ns = {e.n for e in ests}
        if len(ns) != 1:
            raise ValueError(f"all estimates must share one simulation count, got {sorted(ns)}")
        if any(e.p_common != candidate for e in ests):
            raise ValueError("every estimate must be a deviation against the candidate")
        return cls(candidate, {e.p_deviant: e.estimate() for e in ests}, ns.pop(), alpha,
                   include_self)

    @property
    def u_candidate(self) -> float:
        return float(self.utilities[self.candidate])

    def summed(self) -> dict:
        """The utilities that contribute a term to ``f``."""
        if self.include_self:
            return dict(self.utilities)
        return {k: u for k, u in self.utilities.items() if k != self.candidate}


@dataclass(frozen=True)
class EvaluationResult:
    delta: float            # certified: f(delta) <= alpha
    delta_upper: float      # right end of the final bracket: f(delta_upper) > alpha
    f_at_delta: float
    residual: float         # |f(delta) - alpha|
    bracket: int            # integer b with f(b) > alpha (or the cap)
    capped: bool            # f never exceeded alpha below the cap
    iterations: int
    alpha: float
    n: int
    terms: dict = field(default_factory=dict)  # deviation -> term of f at delta


def f_terms(inp: EvaluationInput, delta: float) -> dict:
    if delta < 0:
        raise ValueError(f"delta must be nonnegative, got {delta}")
    rn = math.sqrt(inp.n)
    up = inp.u_candidate
    return {k: 0.5 * math.erfc(rn * (up - delta * u)) for k, u in inp.summed().items()}


def f_delta(inp: EvaluationInput, delta: float) -> float:
    """The sum of all terms, accumulated with ``math.fsum``."""
    return math.fsum(f_terms(inp, delta).values())


def delta_cap(inp: EvaluationInput) -> float:
    denom = max(max(inp.summed().values(), default=0.0), 1.0 / inp.n)
    return inp.u_candidate / denom + 1.0


def certify_delta(inp: EvaluationInput, tol: float = 1e-9, max_iter: int = 200) -> EvaluationResult:
    """Largest ``delta`` with ``f(delta) <= alpha`` (left end of the bracket)."""
    a = inp.alpha
    f0 = f_delta(inp, 0.0)
    if f0 > a:
        raise InsufficientSimulations(
            f"f(0) = {f0:.4g} exceeds alpha = {a}: no delta can be certified with n = {inp.n}; "
            "raise the number of simulations"
        )
    cap = delta_cap(inp)
    # exponential search for an integer b with f(b) > alpha, then the smallest one
    lo_i, b = 0, 1
    capped = False
    while f_delta(inp, b) <= a:
        lo_i = b
        if b >= cap:
            capped = True
            break
        b *= 2
    if capped:
        delta = float(cap)
        return EvaluationResult(
            delta=delta, delta_upper=math.inf, f_at_delta=f_delta(inp, delta),
            residual=abs(f_delta(inp, delta) - a), bracket=b, capped=True, iterations=0,
            alpha=a, n=inp.n, terms=f_terms(inp, delta),
        )
    hi_i = b
    while hi_i - lo_i > 1:
        mid = (lo_i + hi_i) // 2
        if f_delta(inp, mid) > a:
            hi_i = mid
        else:
            lo_i = mid
    lo, hi = float(lo_i), float(hi_i)
    it = 0
    f_lo = f_delta(inp, lo)
    while it < max_iter and a - f_lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        f_mid = f_delta(inp, mid)
        if f_mid > a:
            hi = mid
        else:
            lo, f_lo = mid, f_mid
        it += 1
    if lo > cap:
        lo = float(cap)
        f_lo = f_delta(inp, lo)
    return EvaluationResult(
        delta=lo, delta_upper=hi, f_at_delta=f_lo, residual=abs(f_lo - a), bracket=hi_i,
        capped=False, iterations=it, alpha=a, n=inp.n, terms=f_terms(inp, lo),
    )


def certify_estimates(candidate, estimates, alpha: float = 0.05, tol: float = 1e-9,
                      include_self: bool = False) -> EvaluationResult:
    inp = EvaluationInput.from_estimates(candidate, estimates, alpha, include_self)
    return certify_delta(inp, tol)


# -- validity experiment -------------------------------------------------------


@dataclass(frozen=True)
class ValidityReport:
    true_delta: float
    strategies: int
    n: int
    alpha: float
    deltas: np.ndarray
    insufficient: int

    @property
    def exceedance(self) -> float:
        """Fraction of trials whose certified delta exceeds the true one."""
        return float(np.mean(self.deltas > self.true_delta)) if self.deltas.size else 0.0

    @property
    def mean(self) -> float:
        return float(np.mean(self.deltas)) if self.deltas.size else math.nan

    def histogram(self, bins: int = 40):
        return np.histogram(self.deltas, bins=bins)


def synthetic_utilities(true_delta: float, strategies: int, base: float = 0.5) -> dict:
    """Strategy 0 is the candidate with ``U(p0, p0) = base * delta`` and every
    deviation earns ``base``, so ``p0`` is exactly a ``true_delta``-relaxed
    equilibrium."""
    if strategies < 1:
        raise ValueError("need at least one strategy")
    if not 0 <= base * true_delta <= 1:
        raise ValueError("base * true_delta must be a probability")
    u = {i: base for i in range(strategies)}
    u[0] = base * true_delta
    return u


def validity_experiment(
    true_delta: float,
    strategies: int = 100,
    n: int = 100_000,
    trials: int = 200,
    seed: int = 0,
    alpha: float = 0.05,
    base: float = 0.5,
    include_self: bool = False,
) -> ValidityReport:
    """Certify ``trials`` synthetic games whose estimates are binomial draws."""
    if trials < 1 or n < 1:
        raise ValueError("trials and n must be positive")
    truth = synthetic_utilities(true_delta, strategies, base)
    keys = list(truth)
    q = np.array([truth[k] for k in keys])
    rng = np.random.default_rng(seed)
    deltas = []
    insufficient = 0
    for _ in range(trials):
        k = rng.binomial(n, q)
        inp = EvaluationInput(0, {key: int(ki) / n for key, ki in zip(keys, k)}, n, alpha,
                              include_self)
        try:
            deltas.append(certify_delta(inp).delta)
        except InsufficientSimulations:
            insufficient += 1
    return ValidityReport(true_delta, strategies, n, alpha, np.array(deltas), insufficient)


def variance_bound_holds(step: float = 1e-3) -> tuple[bool, float]:
    """``q1(1-q1) + q2(1-q2) <= 1/2`` on a grid of ``[0, 1]^2``; returns the max."""
    q = np.linspace(0.0, 1.0, int(round(1.0 / step)) + 1)
    v = q * (1 - q)
    m = float(np.max(v[:, None] + v[None, :]))
    return m <= 0.5, m
