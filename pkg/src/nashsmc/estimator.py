"""Scikit-learn style front end to the analysis pipeline.

``fit`` takes a game (a :class:`~nashsmc.game.GameConfig`, any
:class:`~nashsmc.estimation.UtilitySource`, or a square matrix of true
utilities ``U[i][j] = U(p_i, p_j)`` that is sampled as a synthetic game) and
stores the outcome in trailing-underscore attributes::

    est = NashEquilibriumSearch(n1=10_000, n2=100_000).fit(build_aloha(5))
    est.candidate_, est.delta_, est.p_opt_
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .estimation import SyntheticGame, UtilitySource, as_source
from .game import GameConfig, StrategySpace
from .orchestrator import DEFAULT_ALPHA, DEFAULT_D, DEFAULT_N1, DEFAULT_N2, run_pipeline
from .validation import (check_count, check_is_fitted, check_significance,
                         check_strategy_values, check_threshold)


class NashEquilibriumSearch(BaseEstimator):
    def __init__(self, d=DEFAULT_D, n1=DEFAULT_N1, n2=DEFAULT_N2, alpha=DEFAULT_ALPHA,
                 seed=0, workers=1, cache=None, include_self=False, strategies=None):
        self.d = d
        self.n1 = n1
        self.n2 = n2
        self.alpha = alpha
        self.seed = seed
        self.workers = workers
        self.cache = cache
        self.include_self = include_self
        self.strategies = strategies

    def _source(self, X) -> UtilitySource:
        if isinstance(X, (GameConfig, UtilitySource)):
            return as_source(X)
        m = np.asarray(X, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
            raise ValueError(f"a utility matrix must be square and nonempty, got shape {m.shape}")
        values = range(m.shape[0]) if self.strategies is None else self.strategies
        space = StrategySpace("p", check_strategy_values(values))
        if len(space) != m.shape[0]:
            raise ValueError("strategies and the utility matrix disagree in size")
        return SyntheticGame.from_matrix(space, m)

    def fit(self, X, y=None):
        check_threshold(self.d)
        check_significance(self.alpha)
        check_count(self.n1, "n1")
        check_count(self.n2, "n2")
        check_count(self.workers, "workers")
        report = run_pipeline(
            self._source(X), d=self.d, n1=self.n1, n2=self.n2, alpha=self.alpha,
            seed=self.seed, workers=self.workers, cache=self.cache,
            include_self=self.include_self,
        )
        self.report_ = report
        self.found_ = report.found
        self.candidate_ = report.candidate
        self.delta_ = report.delta
        self.p_opt_ = report.p_opt
        self.diagonal_ = dict(report.diagonal)
        return self

    def summary(self) -> str:
        check_is_fitted(self, "report_")
        return self.report_.summary()
