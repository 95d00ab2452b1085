"""Parallel estimation and the two-phase analysis pipeline.

Phase 1 searches for a candidate with ``n1`` runs per pair; phase 2
re-estimates every deviation against the candidate with ``n2`` fresh runs
(a disjoint stream domain) and certifies a relaxed equilibrium.

Work is split into jobs, one per uncached pair, and each job into chunks of
runs that a local process pool executes. Chunk results are summed per job,
and since run ``i`` of a pair always uses the same random stream, the
outcome does not depend on chunk sizes, worker count or arrival order.
Results are handed back in job order, never in completion order.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import FIRST_COMPLETED, ProcessPoolExecutor, wait
from concurrent.futures.process import BrokenProcessPool
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .certify import EvaluationInput, InsufficientSimulations, certify_delta
from .estimation import EstimationCache, UtilityEstimate, UtilitySource, as_source
from .game import strategy_key
from .search import NoCandidate, find_candidate

log = logging.getLogger(__name__)

DEFAULT_N1 = 10_000
DEFAULT_N2 = 100_000
DEFAULT_D = 0.9
DEFAULT_ALPHA = 0.05
REPORT_FORMAT = 1


class WorkerCrashed(RuntimeError):
    """A chunk was lost to a dead worker twice."""


@dataclass(frozen=True)
class Job:
    p_deviant: object
    p_common: object
    n: int
    seed: int
    phase: int = 1

    @property
    def pair(self) -> tuple:
        return (self.p_deviant, self.p_common)

    @property
    def priority(self) -> int:
        """0 for diagonal pairs, which are scheduled first."""
        return 0 if self.p_deviant == self.p_common else 1


def prioritized(jobs: Iterable[Job]) -> list[Job]:
    """Diagonal jobs first; the order is otherwise kept (the sort is stable)."""
    return sorted(jobs, key=lambda j: j.priority)


# -- workers ------------------------------------------------------------------

_WORKER_SOURCE: UtilitySource | None = None


def _init_worker(source: UtilitySource) -> None:
    global _WORKER_SOURCE
    _WORKER_SOURCE = source


def _run_chunk(phase, p_deviant, p_common, start, count, seed) -> np.ndarray:
    return _WORKER_SOURCE.run_chunk(phase, p_deviant, p_common, start, count, seed)


def _chunks(n: int, size: int) -> list[tuple[int, int]]:
    return [(s, min(size, n - s)) for s in range(0, n, size)]


class Scheduler:
    """Runs jobs of one utility source on ``workers`` processes.

    ``workers=1`` runs everything in this process. Otherwise a pool is
    started lazily and kept until :meth:`close`. When a worker dies, the
    pool is rebuilt and the lost chunks are queued again; a chunk lost a
    second time is fatal.
    """

    def __init__(self, source, workers: int = 1, chunk: int | None = None):
        if workers < 1:
            raise ValueError(f"workers must be at least 1, got {workers}")
        self.source = as_source(source)
        self.workers = workers
        self.chunk = chunk
        self.executed = 0  # simulations run, each counted once
        self._pool: ProcessPoolExecutor | None = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True, cancel_futures=True)
            self._pool = None

    def _chunk_size(self, n: int) -> int:
        if self.chunk:
            return self.chunk
        # a few chunks per worker for load balance, not so small that
        # dispatch overhead dominates
        return max(200, math.ceil(n / (4 * self.workers)))

    def _ensure_pool(self) -> ProcessPoolExecutor:
        if self._pool is None:
            self._pool = ProcessPoolExecutor(
                self.workers, initializer=_init_worker, initargs=(self.source,)
            )
        return self._pool

    def run(self, jobs: Sequence[Job]) -> list[tuple[Job, UtilityEstimate]]:
        jobs = list(jobs)
        if not jobs:
            return []
        if self.workers == 1:
            out = []
            for job in jobs:
                counts = self.source.run_chunk(
                    job.phase, job.p_deviant, job.p_common, 0, job.n, job.seed
                )
                self.executed += job.n
                out.append((job, UtilityEstimate.from_counts(counts, *job.pair)))
            return out
        return self._run_pool(jobs)

    def _run_pool(self, jobs: list[Job]) -> list[tuple[Job, UtilityEstimate]]:
        for job in jobs:
            self.source.check_pair(job.p_deviant, job.p_common)
        totals = [np.zeros(5, dtype=np.int64) for _ in jobs]
        todo = [
            (j, start, count)
            for j, job in enumerate(jobs)
            for start, count in _chunks(job.n, self._chunk_size(job.n))
        ]
        attempts: dict[tuple, int] = {}
        while todo:
            pool = self._ensure_pool()
            running = {}
            for j, start, count in todo:
                job = jobs[j]
                fut = pool.submit(
                    _run_chunk, job.phase, job.p_deviant, job.p_common, start, count, job.seed
                )
                running[fut] = (j, start, count)
            todo = []
            broken = False
            pending = set(running)
            while pending:
                done, pending = wait(pending, return_when=FIRST_COMPLETED)
                for fut in done:
                    task = running[fut]
                    try:
                        counts = fut.result()
                    except BrokenProcessPool:
                        broken = True
                        tries = attempts.get(task, 0) + 1
                        if tries > 1:
                            self.close()
                            job = jobs[task[0]]
                            raise WorkerCrashed(
                                f"runs {task[1]}..{task[1] + task[2]} of pair {job.pair} "
                                "were lost to a crashed worker twice"
                            )
                        attempts[task] = tries
                        todo.append(task)
                        continue
                    totals[task[0]] += counts
                    self.executed += task[2]
            if broken:
                log.warning("a worker died; re-queueing %d chunks", len(todo))
                self._pool.shutdown(wait=False, cancel_futures=True)
                self._pool = None
                todo.sort()
        return [
            (job, UtilityEstimate.from_counts(totals[j], *job.pair)) for j, job in enumerate(jobs)
        ]


def schedule(source, jobs: Iterable[Job], workers: int = 1) -> Iterator[tuple[Job, UtilityEstimate]]:
    """Complete all jobs and yield ``(job, estimate)`` with diagonal jobs first."""
    ordered = prioritized(jobs)
    with Scheduler(source, workers) as sched:
        yield from sched.run(ordered)


class PoolEstimator:
    """Cache-backed estimates of many pairs at once."""

    def __init__(self, scheduler: Scheduler, cache: EstimationCache):
        self.scheduler = scheduler
        self.cache = cache
        cache.check(scheduler.source, cache.seed)
        self.computed: dict[tuple, UtilityEstimate] = {}

    def many(self, pairs: Sequence[tuple], n: int, phase: int = 1) -> list[UtilityEstimate]:
        out: dict[tuple, UtilityEstimate] = {}
        jobs = []
        queued = set()
        for pair in pairs:
            hit = self.cache.get(phase, *pair)
            if hit is not None and hit.n >= n:
                out[pair] = hit
            elif pair not in queued:
                queued.add(pair)
                jobs.append(Job(pair[0], pair[1], n, self.cache.seed, phase))
        for job, est in self.scheduler.run(prioritized(jobs)):
            self.cache.put(phase, est)
            self.computed[(phase, *job.pair)] = est
            out[job.pair] = est
        return [out[pair] for pair in pairs]

    def one(self, p_deviant, p_common, n: int, phase: int = 1) -> UtilityEstimate:
        return self.many([(p_deviant, p_common)], n, phase)[0]


# -- pipeline -----------------------------------------------------------------


@dataclass
class AnalysisReport:
    model: str
    fingerprint: str
    players: int
    coalition_size: int
    strategy_label: str
    strategies: list
    goal: str
    d: float
    n1: int
    n2: int
    alpha: float
    seed: int
    status: str  # "ok", "no-candidate" or "insufficient"
    candidate: object = None
    worst_ratio: float | None = None
    worst_deviation: object = None
    delta: float | None = None
    delta_upper: float | None = None
    f_at_delta: float | None = None
    u_candidate: float | None = None
    p_opt: object = None
    u_opt: float | None = None
    diagonal: dict = field(default_factory=dict)
    candidates: list = field(default_factory=list)
    pruned: list = field(default_factory=list)
    pairs_phase1: int = 0
    pairs_phase2: int = 0
    simulations: int = 0
    retry_threshold: float | None = None
    message: str = ""
    wall_time: float | None = None

    @property
    def found(self) -> bool:
        return self.status != "no-candidate"

    def to_dict(self, wall_time: bool = False) -> dict:
        d = asdict(self)
        d["format"] = REPORT_FORMAT
        if not wall_time:
            d.pop("wall_time")
        return d

    def summary(self) -> str:
        lines = [f"model {self.model} ({self.players} players, fingerprint {self.fingerprint})"]
        if self.status == "no-candidate":
            lines.append(
                f"no candidate survived d={self.d:g}; retry with d={self.retry_threshold:g}"
            )
            return "\n".join(lines)
        lines.append(
            f"NE candidate {self.strategy_label}={strategy_key(self.candidate)} "
            f"(worst ratio {self.worst_ratio:.4f} in phase 1)"
        )
        if self.delta is None:
            lines.append(self.message)
        else:
            lines.append(
                f"certified delta {self.delta:.4f} at alpha={self.alpha:g} "
                f"(U(p*,p*)={self.u_candidate:.4f}, n2={self.n2})"
            )
        lines.append(
            f"symmetric optimum {self.strategy_label}={strategy_key(self.p_opt)} "
            f"(U={self.u_opt:.4f})"
        )
        lines.append(
            f"pairs estimated: {self.pairs_phase1} in phase 1, {self.pairs_phase2} in phase 2; "
            f"{self.simulations} simulations"
        )
        return "\n".join(lines)


def symmetric_optimum(values: Sequence, diagonal: dict) -> tuple:
    """``argmax_p U(p, p)``; ties go to the earliest strategy."""
    best = max(values, key=lambda p: (diagonal[p], -values.index(p)))
    return best, diagonal[best]


def run_pipeline(
    config,
    d: float = DEFAULT_D,
    n1: int = DEFAULT_N1,
    n2: int = DEFAULT_N2,
    alpha: float = DEFAULT_ALPHA,
    seed: int = 0,
    workers: int = 1,
    cache=None,
    include_self: bool = False,
) -> AnalysisReport:
    """Search, certify and summarize one game.

    ``cache`` is an :class:`EstimationCache`, a path for one, or None for a
    throwaway in-memory cache.
    """
    if n1 < 1 or n2 < 1:
        raise ValueError("n1 and n2 must be positive")
    t0 = time.perf_counter()
    source = as_source(config)
    values = list(source.strategies)
    if not isinstance(cache, EstimationCache):
        cache = EstimationCache(source.fingerprint(), seed, cache)
    cfg = getattr(source, "config", None)
    report = AnalysisReport(
        model=getattr(cfg, "name", getattr(source, "name", "game")),
        fingerprint=source.fingerprint(),
        players=getattr(cfg, "players", 2),
        coalition_size=getattr(cfg, "coalition_size", 1),
        strategy_label=source.strategies.label,
        strategies=values,
        goal=getattr(cfg, "goal", ""),
        d=d, n1=n1, n2=n2, alpha=alpha, seed=seed, status="ok",
    )
    with Scheduler(source, workers) as sched:
        est = PoolEstimator(sched, cache)
        result = find_candidate(
            values,
            lambda a, b: est.one(a, b, n1, phase=1),
            d=d,
            seed=seed,
            estimate_many=lambda pairs: est.many(pairs, n1, phase=1),
        )
        diag = {p: result.estimates[(p, p)].estimate() for p in values}
        report.diagonal = {strategy_key(p): u for p, u in diag.items()}
        report.p_opt, report.u_opt = symmetric_optimum(values, diag)
        report.pairs_phase1 = result.pairs_estimated
        report.pruned = [strategy_key(p) for p in values if p in result.pruned]
        if isinstance(result, NoCandidate):
            report.status = "no-candidate"
            report.retry_threshold = result.retry_threshold
            report.message = (
                f"every strategy was pruned at d={d:g}; retry with d={result.retry_threshold:g}"
            )
        else:
            p = result.strategy
            report.candidate = p
            report.worst_ratio = result.worst_ratio
            report.worst_deviation = result.worst_deviation
            report.candidates = [strategy_key(q) for q in result.candidates]
            fresh = est.many([(q, p) for q in values], n2, phase=2)
            report.pairs_phase2 = len(fresh)
            inp = EvaluationInput.from_estimates(p, fresh, alpha, include_self)
            report.u_candidate = inp.u_candidate
            try:
                res = certify_delta(inp)
            except InsufficientSimulations as exc:
                report.status = "insufficient"
                report.message = str(exc)
            else:
                report.delta = res.delta
                report.delta_upper = res.delta_upper
                report.f_at_delta = res.f_at_delta
        report.simulations = sched.executed
    report.wall_time = time.perf_counter() - t0
    return report


# -- export -------------------------------------------------------------------


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


def report_text(report: AnalysisReport, wall_time: bool = False) -> str:
    """The report as JSON with a fixed key order."""
    return json.dumps(_jsonable(report.to_dict(wall_time)), indent=2) + "\n"


def report_csv(report: AnalysisReport, wall_time: bool = False) -> str:
    """One ``field,value`` row per report field; containers are JSON-encoded."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["field", "value"])
    for key, value in report.to_dict(wall_time).items():
        if isinstance(value, (dict, list)):
            value = json.dumps(_jsonable(value), separators=(",", ":"))
        elif value is None:
            value = ""
        w.writerow([key, value])
    return buf.getvalue()


SURFACE_COLUMNS = (
    "phase", "p_deviant", "p_common", "k", "n", "utility", "truncations", "deadlocks", "timelocks"
)


def surface_rows(cache: EstimationCache, values: Sequence | None = None) -> list[tuple]:
    """One row per cached estimate, ordered by phase, common and deviant strategy."""
    order = {v: i for i, v in enumerate(values)} if values is not None else None

    def key(item):
        (phase, pd, pc), _ = item
        if order is not None:
            return (phase, order.get(pc, math.inf), order.get(pd, math.inf))
        return (phase, repr(pc), repr(pd))

    rows = []
    for (phase, pd, pc), e in sorted(cache.items(), key=key):
        rows.append((phase, strategy_key(pd), strategy_key(pc), e.k, e.n, repr(e.estimate()),
                     e.truncations, e.deadlocks, e.timelocks))
    return rows


def surface_csv(cache: EstimationCache, values: Sequence | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SURFACE_COLUMNS)
    w.writerows(surface_rows(cache, values))
    return buf.getvalue()


def surface_text(cache: EstimationCache, values: Sequence | None = None) -> str:
    rows = [dict(zip(SURFACE_COLUMNS, r)) for r in surface_rows(cache, values)]
    return json.dumps({"fingerprint": cache.fingerprint, "seed": cache.seed, "rows": rows},
                      indent=2) + "\n"


def histogram_csv(deltas, bins: int = 40) -> str:
    counts, edges = np.histogram(np.asarray(deltas, dtype=float), bins=bins)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bin_lo", "bin_hi", "count"])
    for lo, hi, c in zip(edges[:-1], edges[1:], counts):
        w.writerow([repr(float(lo)), repr(float(hi)), int(c)])
    return buf.getvalue()


def histogram_text(deltas, bins: int = 40) -> str:
    counts, edges = np.histogram(np.asarray(deltas, dtype=float), bins=bins)
    return json.dumps({"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
                      indent=2) + "\n"


def export(obj, path, fmt: str = "csv", values: Sequence | None = None,
           wall_time: bool = False) -> Path:
    """Write a report, an estimation cache (surface) or validity deltas.

    ``fmt`` is ``csv`` or ``json`` (structured text).
    """
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown export format {fmt!r} (use csv or json)")
    if isinstance(obj, AnalysisReport):
        text = report_csv(obj, wall_time) if fmt == "csv" else report_text(obj, wall_time)
    elif isinstance(obj, EstimationCache):
        text = surface_csv(obj, values) if fmt == "csv" else surface_text(obj, values)
    else:
        text = histogram_csv(obj) if fmt == "csv" else histogram_text(obj)
    path = Path(path)
    path.write_text(text)
    return path
