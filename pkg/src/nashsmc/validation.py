"""Argument checks shared by the estimator and the command line."""
from __future__ import annotations

import math
import numbers

from sklearn.utils.validation import check_is_fitted  # noqa: F401  (re-exported)


def check_threshold(d) -> float:
    if not isinstance(d, numbers.Real) or not 0.0 <= d <= 1.0:
        raise ValueError(f"threshold d must lie in [0, 1], got {d!r}")
    return float(d)


def check_significance(alpha) -> float:
    if not isinstance(alpha, numbers.Real) or not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha!r}")
    return float(alpha)


def check_count(n, name: str = "n") -> int:
    if isinstance(n, bool) or not isinstance(n, numbers.Integral) or n < 1:
        raise ValueError(f"{name} must be a positive integer, got {n!r}")
    return int(n)


def check_strategy_values(values) -> tuple:
    vals = tuple(values)
    if not vals:
        raise ValueError("strategy space is empty")
    for v in vals:
        if isinstance(v, float) and not math.isfinite(v):
            raise ValueError(f"strategy value {v!r} is not finite")
    if len(set(vals)) != len(vals):
        raise ValueError("strategy space has duplicate values")
    return vals
