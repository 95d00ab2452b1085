"""Monte Carlo utility estimates and their cache.

``U(p', p)`` is the probability that player 0's goal holds when player 0
(with its coalition) plays ``p'`` and every other player plays ``p``. It is
estimated as ``k / n`` over ``n`` independent runs.

Run ``i`` of pair ``(p', p)`` in phase ``phase`` draws from stream
``pair_key(phase, p', p) ^ i`` of the base seed, so an estimate depends only
on ``(source, phase, p', p, n, seed)``: never on chunking, worker count or the
order in which pairs are computed. Phases get disjoint stream domains, so a
re-estimate in phase 2 shares no draws with phase 1.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping

import numpy as np

from .game import GameConfig, StrategySpace, build_system
from .rng import GOLDEN, key64

CACHE_FORMAT = 1
# counts layout shared with the engine
SAT, VIOL, STEP_CAP, DEADLOCK, TIMELOCK = range(5)


class StaleCacheError(RuntimeError):
    """The cache file belongs to a different model or seed."""


@dataclass(frozen=True)
class UtilityEstimate:
    k: int
    n: int
    p_deviant: object
    p_common: object
    truncations: int = 0
    deadlocks: int = 0
    timelocks: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if not 0 <= self.k <= self.n:
            raise ValueError(f"k={self.k} outside [0, {self.n}]")

    def estimate(self) -> float:
        return self.k / self.n

    @property
    def violations(self) -> int:
        return self.n - self.k

    def stderr(self) -> float:
        q = self.estimate()
        return math.sqrt(q * (1 - q) / self.n)

    def to_json(self) -> dict:
        return {
            "p_deviant": self.p_deviant, "p_common": self.p_common, "k": self.k, "n": self.n,
            "truncations": self.truncations, "deadlocks": self.deadlocks,
            "timelocks": self.timelocks,
        }

    @classmethod
    def from_counts(cls, counts, p_deviant, p_common) -> "UtilityEstimate":
        c = [int(x) for x in counts]
        return cls(c[SAT], c[SAT] + c[VIOL], p_deviant, p_common, c[STEP_CAP], c[DEADLOCK],
                   c[TIMELOCK])


def pair_key(phase: int, p_deviant, p_common) -> int:
    return key64("pair", int(phase), p_deviant, p_common)


# -- utility sources ----------------------------------------------------------


class UtilitySource(ABC):
    """Something that can run simulations ``start .. start+count-1`` of a pair.

    Sources are pickled into worker processes, so they must stay lightweight.
    """

    strategies: StrategySpace

    @abstractmethod
    def fingerprint(self) -> str: ...

    @abstractmethod
    def run_chunk(self, phase: int, p_deviant, p_common, start: int, count: int,
                  seed: int) -> np.ndarray:
        """Counts ``[satisfied, violated, step_cap, deadlock, timelock]``."""

    def check_pair(self, p_deviant, p_common) -> None:
        from .game import StrategyError

        for p in (p_deviant, p_common):
            if p not in self.strategies:
                raise StrategyError(f"{p!r} is not in the strategy space {self.strategies.label}")


class SimulationSource(UtilitySource):
    """Utilities of a :class:`GameConfig`, estimated with the compiled engine."""

    def __init__(self, config: GameConfig):
        self.config = config
        self.strategies = config.strategies
        self._models: dict = {}
        self._fp = config.fingerprint()

    def __getstate__(self):
        return {"config": self.config}

    def __setstate__(self, state):
        self.__init__(state["config"])

    def fingerprint(self) -> str:
        return self._fp

    def model(self, p_deviant, p_common):
        from .engine import CompiledModel

        key = (p_deviant, p_common)
        m = self._models.get(key)
        if m is None:
            net = build_system(self.config, p_deviant, p_common)
            m = CompiledModel(net, self.config.formula.bind(net), self.config.max_steps)
            if len(self._models) > 64:
                self._models.clear()
            self._models[key] = m
        return m

    def run_chunk(self, phase, p_deviant, p_common, start, count, seed):
        self.check_pair(p_deviant, p_common)
        m = self.model(p_deviant, p_common)
        return m.run_batch(seed, pair_key(phase, p_deviant, p_common), start, count)


_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def first_uniforms(seed: int, key: int, start: int, count: int) -> np.ndarray:
    """The first draw of streams ``key ^ i`` for ``i`` in ``[start, start+count)``,
    vectorized (equal to ``RngStream(seed, key ^ i).random()``)."""
    mask = (1 << 64) - 1
    idx = np.arange(start, start + count, dtype=np.uint64)
    streams = np.uint64(key & mask) ^ idx
    with np.errstate(over="ignore"):
        s0 = _mix64(np.uint64(seed & mask) ^ _mix64(streams + np.uint64(GOLDEN)))
        out = _mix64(s0 + np.uint64(GOLDEN))
    return (out >> np.uint64(11)).astype(np.float64) * 2.0**-53


class SyntheticGame(UtilitySource):
    """A game given by its true utility table; each run is a Bernoulli draw.

    ``table[(p', p)]`` is the success probability of the pair.
    """

    def __init__(self, strategies: StrategySpace, table: Mapping, name: str = "synthetic"):
        self.strategies = strategies
        self.table = dict(table)
        self.name = name
        missing = [(a, b) for a in strategies for b in strategies if (a, b) not in self.table]
        if missing:
            raise ValueError(f"utility table misses {len(missing)} pairs, e.g. {missing[0]}")
        for key, q in self.table.items():
            if not 0.0 <= q <= 1.0:
                raise ValueError(f"utility {q} of {key} outside [0, 1]")

    @classmethod
    def from_matrix(cls, strategies: StrategySpace, matrix, name: str = "synthetic"):
        """``matrix[i][j]`` is ``U(values[i], values[j])``."""
        v = strategies.values
        table = {(v[i], v[j]): float(matrix[i][j]) for i in range(len(v)) for j in range(len(v))}
        return cls(strategies, table, name)

    def fingerprint(self) -> str:
        blob = json.dumps(
            [self.name, self.strategies.label, list(self.strategies.values),
             sorted((repr(k), v) for k, v in self.table.items())],
            separators=(",", ":"),
        )
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def run_chunk(self, phase, p_deviant, p_common, start, count, seed):
        self.check_pair(p_deviant, p_common)
        q = self.table[(p_deviant, p_common)]
        u = first_uniforms(seed, pair_key(phase, p_deviant, p_common), start, count)
        k = int(np.count_nonzero(u < q))
        return np.array([k, count - k, 0, 0, 0], dtype=np.int64)


def as_source(obj) -> UtilitySource:
    if isinstance(obj, UtilitySource):
        return obj
    if isinstance(obj, GameConfig):
        return SimulationSource(obj)
    raise TypeError(f"cannot estimate utilities of {type(obj).__name__}")


def estimate_utility(source, p_deviant, p_common, n: int, seed: int,
                     phase: int = 1) -> UtilityEstimate:
    """Run ``n`` simulations of the pair in this process."""
    if n < 1:
        raise ValueError(f"n must be positive, got {n}")
    src = as_source(source)
    counts = src.run_chunk(phase, p_deviant, p_common, 0, n, seed)
    return UtilityEstimate.from_counts(counts, p_deviant, p_common)


# -- cache --------------------------------------------------------------------


class EstimationCache:
    """Estimates keyed by ``(phase, p', p)``, optionally backed by a file.

    The file is JSON lines: a header ``{"format", "fingerprint", "seed"}``
    followed by one object per estimate (``phase``, ``p_deviant``,
    ``p_common``, ``k``, ``n``, ``truncations``, ``deadlocks``, ``timelocks``).
    Lines are only ever appended; a later line for the same key with a
    larger ``n`` supersedes earlier ones.
    """

    def __init__(self, fingerprint: str, seed: int, path: str | os.PathLike | None = None):
        self.fingerprint = fingerprint
        self.seed = int(seed)
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple, UtilityEstimate] = {}
        if self.path is not None:
            if self.path.exists() and self.path.stat().st_size > 0:
                self._load()
            else:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "w") as fh:
                    fh.write(json.dumps(self._header()) + "\n")

    def _header(self) -> dict:
        return {"format": CACHE_FORMAT, "fingerprint": self.fingerprint, "seed": self.seed}

    def _load(self) -> None:
        with open(self.path) as fh:
            lines = fh.read().splitlines()
        try:
            head = json.loads(lines[0])
        except (json.JSONDecodeError, IndexError) as exc:
            raise StaleCacheError(f"{self.path}: unreadable cache header") from exc
        if head.get("format") != CACHE_FORMAT:
            raise StaleCacheError(f"{self.path}: unsupported cache format {head.get('format')!r}")
        if head.get("fingerprint") != self.fingerprint:
            raise StaleCacheError(
                f"{self.path}: cache was built for model {head.get('fingerprint')}, "
                f"not {self.fingerprint}; delete it or pick another --cache path"
            )
        if head.get("seed") != self.seed:
            raise StaleCacheError(
                f"{self.path}: cache was built with seed {head.get('seed')}, not {self.seed}"
            )
        for ln, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                phase = int(d.pop("phase"))
                est = UtilityEstimate(**d)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                # a torn final line from an interrupted run is dropped
                if ln == len(lines):
                    continue
                raise StaleCacheError(f"{self.path}:{ln}: corrupt cache entry")
            self._remember(phase, est)

    def _remember(self, phase: int, est: UtilityEstimate) -> bool:
        key = (phase, est.p_deviant, est.p_common)
        old = self._entries.get(key)
        if old is not None and old.n >= est.n:
            return False
        self._entries[key] = est
        return True

    def get(self, phase: int, p_deviant, p_common) -> UtilityEstimate | None:
        return self._entries.get((phase, p_deviant, p_common))

    def put(self, phase: int, est: UtilityEstimate) -> None:
        if self._remember(phase, est) and self.path is not None:
            with open(self.path, "a") as fh:
                fh.write(json.dumps({"phase": phase, **est.to_json()}) + "\n")

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key) -> bool:
        return key in self._entries

    def items(self, phase: int | None = None) -> Iterator[tuple[tuple, UtilityEstimate]]:
        for key, est in self._entries.items():
            if phase is None or key[0] == phase:
                yield key, est

    def check(self, source: UtilitySource, seed: int) -> None:
        if source.fingerprint() != self.fingerprint:
            raise StaleCacheError(
                f"cache fingerprint {self.fingerprint} does not match model {source.fingerprint()}"
            )
        if int(seed) != self.seed:
            raise StaleCacheError(f"cache seed {self.seed} does not match seed {seed}")


def open_cache(source, seed: int, path=None) -> EstimationCache:
    return EstimationCache(as_source(source).fingerprint(), seed, path)


def cache_get_or_estimate(cache: EstimationCache, source, p_deviant, p_common, n: int,
                          seed: int | None = None, phase: int = 1) -> UtilityEstimate:
    """Cached estimate with at least ``n`` runs, computing it if needed."""
    src = as_source(source)
    seed = cache.seed if seed is None else seed
    cache.check(src, seed)
    hit = cache.get(phase, p_deviant, p_common)
    if hit is not None and hit.n >= n:
        return hit
    est = estimate_utility(src, p_deviant, p_common, n, seed, phase)
    cache.put(phase, est)
    return est
