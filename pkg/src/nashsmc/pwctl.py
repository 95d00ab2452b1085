"""Cost-bounded reachability formulas ``F[c <= C](phi)`` and their monitors.

A run satisfies ``F[c <= C](phi)`` if it visits a state where ``phi`` holds
while the observer clock ``c`` is at most ``C``. Within a delay clocks move
linearly, so the truth value of ``phi`` can only change at the instants where
one of its clock atoms crosses its bound; the online monitor evaluates
``phi`` at exactly those instants (and the midpoints between them).

The offline checker :func:`offline_verdict` computes the same verdict with
interval algebra over the predicate tree and is used to cross-check the
online monitor on recorded traces.
"""
from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass, field
from typing import Sequence

from .expr import (
    CLOCK_EPS,
    CMP_LE,
    CMP_LT,
    Expr,
    ExpressionError,
    Ref,
    as_clock_bound,
    compile_expr,
    dotted_name,
    parse,
    split_conjuncts,
)
from .model import Network, ResolvedNetwork, SystemState

SATISFIED = "satisfied"
VIOLATED = "violated"
CONTINUE = "continue"

_FORMULA_RE = re.compile(r"^\s*(?:F|<>|E<>)\s*\[\s*([\w.]+)\s*<=\s*([^\]]+)\]\s*\((.*)\)\s*$", re.S)


class FormulaError(ValueError):
    """Malformed formula or a formula that does not fit the network."""


@dataclass(frozen=True)
class Verdict:
    outcome: str
    witness_time: float | None = None
    reason: str = ""  # "", "step_cap", "deadlock", "timelock", "energy_cap"

    @property
    def satisfied(self) -> bool:
        return self.outcome == SATISFIED


@dataclass(frozen=True)
class PwctlFormula:
    """``F[observer <= bound](predicate)`` at the name level."""

    observer: str
    bound: float
    predicate: str

    @classmethod
    def parse(cls, text: str) -> "PwctlFormula":
        m = _FORMULA_RE.match(text)
        if not m:
            raise FormulaError(f"expected 'F[clock<=C](predicate)', got {text!r}")
        try:
            bound = float(m.group(2))
        except ValueError:
            raise FormulaError(f"time bound must be a number in {text!r}") from None
        if bound < 0:
            raise FormulaError("time bound must be nonnegative")
        return cls(m.group(1), bound, m.group(3).strip())

    @property
    def text(self) -> str:
        return f"F[{self.observer}<={self.bound:g}]({self.predicate})"

    def bind(self, network: Network | ResolvedNetwork) -> "BoundFormula":
        net = network.resolve() if isinstance(network, Network) else network
        return BoundFormula(self, net)


def _formula_scope(net: ResolvedNetwork):
    first = net.comp_names[0] if net.comp_names else ""

    def lookup(name: str) -> Ref | None:
        return net.lookup(name) or net.lookup(f"{first}.{name}")

    return lookup


@dataclass
class BoundFormula:
    """A formula resolved against one network; carries the monitor logic."""

    formula: PwctlFormula
    net: ResolvedNetwork
    observer: int = field(init=False)
    bound: float = field(init=False)
    predicate: Expr = field(init=False)
    clock_atoms: list[tuple[int, int, float]] = field(init=False)
    dead_caps: list[tuple[int, float]] = field(init=False)
    tree: ast.expr = field(init=False, repr=False)

    def __post_init__(self):
        net = self.net
        scope = _formula_scope(net)
        ref = scope(self.formula.observer)
        if ref is None or ref.kind != "clock":
            raise FormulaError(f"observer {self.formula.observer!r} is not a clock")
        self.observer = ref.index
        self.bound = float(self.formula.bound)
        try:
            self.tree = parse(self.formula.predicate)
            self.predicate = compile_expr(self.tree, scope, allow_clocks=True)
        except ExpressionError as exc:
            raise FormulaError(f"predicate: {exc}") from None
        reset = {x for e in net.edges for x in e.resets}
        problems = []
        if self.observer in reset:
            problems.append(f"observer {self.formula.observer} is reset by some edge")
        owner = net.clock_owner[self.observer]
        for li in net.comp_locations[owner]:
            if net.locations[li].rates[self.observer] < 1:
                problems.append(
                    f"observer {self.formula.observer} has rate < 1 in {net.locations[li].name}"
                )
        if problems:
            raise FormulaError("; ".join(problems))
        atoms = []
        for node in ast.walk(self.tree):
            cb = as_clock_bound(node, scope) if isinstance(node, ast.Compare) else None
            if cb is not None:
                atoms.append(cb)
        self.clock_atoms = atoms
        # a top-level upper bound on a never-reset clock can never recover once exceeded
        caps = []
        for conj in split_conjuncts(self.tree):
            cb = as_clock_bound(conj, scope)
            if cb is not None and cb[1] in (CMP_LT, CMP_LE) and cb[0] not in reset:
                caps.append((cb[0], cb[2]))
        self.dead_caps = caps

    # -- pointwise --------------------------------------------------------
    def observer_value(self, state: SystemState) -> float:
        return state.clocks[self.observer]

    def predicate_holds(self, state: SystemState) -> bool:
        return bool(self.predicate(state.vars, state.clocks, state.locations))

    def check_state(self, state: SystemState) -> bool:
        return self.observer_value(state) <= self.bound + CLOCK_EPS and self.predicate_holds(state)

    def dead(self, state: SystemState) -> bool:
        return any(state.clocks[x] > b + CLOCK_EPS for x, b in self.dead_caps)

    # -- along a delay ----------------------------------------------------
    def first_satisfaction(self, pre: SystemState, delay: float) -> float | None:
        """Earliest offset t in [0, delay] where the formula's condition holds."""
        net = self.net
        obs = pre.clocks[self.observer]
        if obs > self.bound + CLOCK_EPS:
            return None
        r_obs = net.rate(pre.locations, self.observer)
        t_end = delay
        if r_obs > 0:
            t_end = min(t_end, (self.bound - obs) / r_obs)
        if t_end < 0:
            t_end = 0.0
        instants = [0.0]
        for x, _, b in self.clock_atoms:
            r = net.rate(pre.locations, x)
            if r > 0:
                t = (b - pre.clocks[x]) / r
                if 0.0 < t < t_end:
                    instants.append(t)
        instants.append(t_end)
        instants = sorted(set(instants))
        probe = []
        for i, t in enumerate(instants):
            if i:
                probe.append((instants[i - 1] + t) * 0.5)
            probe.append(t)
        rates = [net.rate(pre.locations, i) for i in range(len(pre.clocks))]
        for t in probe:
            clocks = [c + r * t for c, r in zip(pre.clocks, rates)]
            if self.predicate(pre.vars, clocks, pre.locations):
                return t
        return None

    def start(self, state: SystemState) -> Verdict | None:
        if self.check_state(state):
            return Verdict(SATISFIED, state.elapsed)
        if self.observer_value(state) > self.bound + CLOCK_EPS or self.dead(state):
            return Verdict(VIOLATED)
        return None

    def monitor_step(
        self, pre: SystemState, delay: float, post: SystemState
    ) -> tuple[str, float | None]:
        t = self.first_satisfaction(pre, delay)
        if t is not None:
            return SATISFIED, pre.elapsed + t
        if self.observer_value(post) > self.bound + CLOCK_EPS:
            return VIOLATED, None
        if self.check_state(post):
            return SATISFIED, post.elapsed
        if self.dead(post):
            return VIOLATED, None
        return CONTINUE, None

    def step(self, pre: SystemState, delay: float, post: SystemState) -> Verdict | None:
        outcome, t = self.monitor_step(pre, delay, post)
        if outcome == CONTINUE:
            return None
        return Verdict(outcome, t)

    def finish_diverging(self, state: SystemState) -> Verdict:
        """Verdict when no discrete transition will ever happen again."""
        r = self.net.rate(state.locations, self.observer)
        horizon = (self.bound - self.observer_value(state)) / r if r > 0 else math.inf
        if horizon >= 0 and math.isfinite(horizon):
            t = self.first_satisfaction(state, horizon)
            if t is not None:
                return Verdict(SATISFIED, state.elapsed + t, "deadlock")
        return Verdict(VIOLATED, None, "deadlock")


def check_state(formula: BoundFormula, state: SystemState) -> bool:
    return formula.check_state(state)


def monitor_step(formula: BoundFormula, pre: SystemState, delay: float, post: SystemState) -> str:
    return formula.monitor_step(pre, delay, post)[0]


class StopCondition:
    """Decides when :func:`nashsmc.race.simulate` halts."""

    def start(self, state: SystemState) -> Verdict | None:
        return None

    def step(self, pre: SystemState, delay: float, post: SystemState) -> Verdict | None:
        return None

    def finish_diverging(self, state: SystemState) -> Verdict:
        return Verdict(VIOLATED, None, "deadlock")


class FormulaStop(StopCondition):
    def __init__(self, formula: BoundFormula):
        self.formula = formula

    def start(self, state):
        return self.formula.start(state)

    def step(self, pre, delay, post):
        return self.formula.step(pre, delay, post)

    def finish_diverging(self, state):
        return self.formula.finish_diverging(state)


class AfterSteps(StopCondition):
    """Stops after a fixed number of race steps (no verdict semantics)."""

    def __init__(self, steps: int):
        self.steps = steps
        self._seen = 0

    def start(self, state):
        self._seen = 0
        return Verdict(VIOLATED, None, "after_steps") if self.steps <= 0 else None

    def step(self, pre, delay, post):
        self._seen += 1
        return Verdict(VIOLATED, None, "after_steps") if self._seen >= self.steps else None


def as_stop_condition(formula: BoundFormula) -> StopCondition:
    return FormulaStop(formula)


# -- offline checker ------------------------------------------------------

Intervals = list[tuple[float, float]]


def _norm(iv: Intervals) -> Intervals:
    iv = sorted((a, b) for a, b in iv if a <= b)
    out: Intervals = []
    for a, b in iv:
        if out and a <= out[-1][1] + CLOCK_EPS:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def _intersect(x: Intervals, y: Intervals) -> Intervals:
    out = []
    for a, b in x:
        for c, d in y:
            lo, hi = max(a, c), min(b, d)
            if lo <= hi:
                out.append((lo, hi))
    return _norm(out)


def _complement(x: Intervals, lo: float, hi: float) -> Intervals:
    out, cur = [], lo
    for a, b in _norm(x):
        if a > cur:
            out.append((cur, a))
        cur = max(cur, b)
    if cur < hi:
        out.append((cur, hi))
    return out


def _interval_fn(formula: BoundFormula):
    """Compile the predicate once into ``(state, length) -> Intervals``."""
    net = formula.net
    scope = _formula_scope(net)

    def build(node: ast.expr):
        cb = as_clock_bound(node, scope) if isinstance(node, ast.Compare) else None
        if cb is not None:
            x, cmp, b = cb
            upper = cmp in (CMP_LT, CMP_LE)

            def atom(state, length):
                r = net.rate(state.locations, x)
                v = state.clocks[x]
                if r == 0:
                    ok = v <= b + CLOCK_EPS if upper else v >= b - CLOCK_EPS
                    return [(0.0, length)] if ok else []
                cross = (b - v) / r
                if upper:
                    return _norm([(0.0, min(length, cross + CLOCK_EPS / r))])
                return _norm([(max(0.0, cross - CLOCK_EPS / r), length)])

            return atom
        if isinstance(node, ast.BoolOp):
            parts = [build(v) for v in node.values]
            conj = isinstance(node.op, ast.And)

            def boolop(state, length):
                acc = parts[0](state, length)
                for p in parts[1:]:
                    acc = _intersect(acc, p(state, length)) if conj else _norm(acc + p(state, length))
                return acc

            return boolop
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, ast.Not):
            inner = build(node.operand)
            return lambda state, length: _complement(inner(state, length), 0.0, length)
        names = {dotted_name(n) for n in ast.walk(node)} - {None}
        if any((scope(n) or Ref("x")).kind == "clock" for n in names):
            raise FormulaError(f"clock used outside an atom: {ast.unparse(node)}")
        pred = compile_expr(node, scope)

        def discrete(state, length):
            return [(0.0, length)] if pred(state.vars, state.clocks, state.locations) else []

        return discrete

    return build(formula.tree)


def truth_intervals(formula: BoundFormula, state: SystemState, length: float) -> Intervals:
    """Offsets in [0, length] at which the predicate holds during a delay."""
    fn = formula.__dict__.get("_intervals")
    if fn is None:
        fn = formula.__dict__["_intervals"] = _interval_fn(formula)
    return fn(state, length)


def offline_verdict(
    formula: BoundFormula, states: Sequence[SystemState], delays: Sequence[float]
) -> Verdict:
    """Verdict of a recorded run: ``states[i+1]`` follows ``states[i]`` after
    ``delays[i]`` and (possibly) one discrete transition. A trailing
    ``math.inf`` delay marks a run that diverges without further transitions."""
    obs_bound = formula.bound
    for i, state in enumerate(states):
        # the state itself (reached by a discrete step)
        obs = formula.observer_value(state)
        if obs <= obs_bound + CLOCK_EPS and formula.predicate_holds(state):
            return Verdict(SATISFIED, state.elapsed)
        if i == len(delays):
            break
        d = delays[i]
        r = formula.net.rate(state.locations, formula.observer)
        room = (obs_bound - obs) / r if r > 0 else math.inf
        length = min(d, room)
        if length >= -CLOCK_EPS and math.isfinite(length):
            iv = truth_intervals(formula, state, max(length, 0.0))
            if iv:
                return Verdict(SATISFIED, state.elapsed + iv[0][0])
        if d > room + CLOCK_EPS:
            return Verdict(VIOLATED)
    return Verdict(VIOLATED)
