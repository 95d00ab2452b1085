"""Deterministic semantics of networks of weighted timed automata.

All functions take either a :class:`~nashsmc.model.Network` or its resolved
form. Clock comparisons use :data:`~nashsmc.expr.CLOCK_EPS` so that a clock
advanced exactly onto an integer deadline satisfies guards on both sides.
Strict and non-strict bounds are treated alike.
"""
from __future__ import annotations

import math
from typing import Iterable, Sequence

from .expr import CLOCK_EPS
from .model import (
    EMIT,
    RECEIVE,
    AtomicBound,
    Network,
    ResolvedEdge,
    ResolvedNetwork,
    SystemState,
)

INF = math.inf


class SemanticError(RuntimeError):
    """A state violates an invariant or a transition is not allowed."""


class RangeError(SemanticError):
    """A variable update left the variable's declared range."""


class ContractViolation(ValueError):
    """A caller broke a precondition (e.g. delaying past ``max_delay``)."""


def _net(network) -> ResolvedNetwork:
    return network.resolve() if isinstance(network, Network) else network


def bound_holds(b: AtomicBound, value: float) -> bool:
    if b.is_lower:
        return value >= b.bound - CLOCK_EPS
    return value <= b.bound + CLOCK_EPS


def component_max_delay(net: ResolvedNetwork, state: SystemState, comp: int) -> float:
    loc = net.locations[state.locations[comp]]
    if loc.urgent:
        return 0.0
    best = INF
    for b in loc.invariant:
        x = state.clocks[b.clock]
        if x > b.bound + CLOCK_EPS:
            raise SemanticError(
                f"state violates invariant {b.describe(net)} of {net.comp_names[comp]}.{loc.name}"
            )
        r = loc.rates[b.clock]
        if r > 0:
            best = min(best, max(0.0, (b.bound - x) / r))
    return best


def max_delay(network, state: SystemState) -> float:
    """Largest delay keeping every component invariant satisfied."""
    net = _net(network)
    return min(
        (component_max_delay(net, state, c) for c in range(net.n_components)), default=INF
    )


def apply_delay(network, state: SystemState, d: float) -> SystemState:
    net = _net(network)
    if d < 0:
        raise ContractViolation(f"negative delay {d}")
    limit = max_delay(net, state)
    if d > limit + CLOCK_EPS:
        raise ContractViolation(f"delay {d} exceeds max_delay {limit}")
    if d == 0:
        return state
    locs = state.locations
    clocks = tuple(
        x + net.locations[locs[net.clock_owner[i]]].rates[i] * d
        for i, x in enumerate(state.clocks)
    )
    return SystemState(locs, clocks, state.vars, state.elapsed + d)


def guard_holds(net: ResolvedNetwork, edge: ResolvedEdge, state: SystemState) -> bool:
    for b in edge.guard.clock_conjuncts:
        if not bound_holds(b, state.clocks[b.clock]):
            return False
    for g in edge.guard.var_conjuncts:
        if not g(state.vars):
            return False
    return True


def local_enabled(
    net: ResolvedNetwork, state: SystemState, comp: int, receive: bool = False, channel: int = -1
) -> list[ResolvedEdge]:
    """Edges of ``comp`` enabled in ``state``.

    With ``receive=False`` these are the edges the component can take on its
    own (internal or emitting) with positive weight; otherwise the receive
    edges on ``channel``.
    """
    out = []
    for ei in net.out_edges[state.locations[comp]]:
        e = net.edges[ei]
        if receive:
            if e.direction != RECEIVE or e.channel != channel:
                continue
        elif e.direction == RECEIVE or e.weight <= 0:
            continue
        if guard_holds(net, e, state):
            out.append(e)
    return out


def enabled_edges(network, state: SystemState) -> list[tuple[int, ResolvedEdge]]:
    """All (component, edge) pairs enabled in ``state``.

    Receive edges are listed only while an emitter on the same channel is
    enabled in another component; only non-receive edges are valid choices
    for :func:`apply_edge`.
    """
    net = _net(network)
    own = [(c, e) for c in range(net.n_components) for e in local_enabled(net, state, c)]
    emitting = {(e.channel, c) for c, e in own if e.direction == EMIT}
    out = list(own)
    for c in range(net.n_components):
        for ei in net.out_edges[state.locations[c]]:
            e = net.edges[ei]
            if e.direction != RECEIVE:
                continue
            if any(ch == e.channel and ec != c for ch, ec in emitting) and guard_holds(net, e, state):
                out.append((c, e))
    return out


def apply_edge(
    network,
    state: SystemState,
    choice: tuple[int, ResolvedEdge],
    receivers: dict[int, ResolvedEdge] | None = None,
) -> SystemState:
    """Fire ``choice``; on an emit, every component with an enabled receive
    edge on the channel follows (``receivers`` picks among several, default
    the first). Updates run emitter first, then receivers by index."""
    net = _net(network)
    comp, edge = choice
    if edge.direction == RECEIVE:
        raise ContractViolation("receive edges fire only together with an emitter")
    if state.locations[comp] != edge.source or not guard_holds(net, edge, state):
        raise ContractViolation(f"edge {net.edge_label(edge)} is not enabled")
    moves: list[ResolvedEdge] = [edge]
    if edge.direction == EMIT:
        receivers = receivers or {}
        for c in range(net.n_components):
            if c == comp:
                continue
            options = local_enabled(net, state, c, receive=True, channel=edge.channel)
            if not options:
                if c in receivers:
                    raise ContractViolation(f"component {c} has no enabled receive edge")
                continue
            pick = receivers.get(c, options[0])
            if pick not in options:
                raise ContractViolation(f"receiver edge {net.edge_label(pick)} is not enabled")
            moves.append(pick)
    return fire(net, state, moves)


def fire(net: ResolvedNetwork, state: SystemState, moves: Sequence[ResolvedEdge]) -> SystemState:
    locs = list(state.locations)
    clocks = list(state.clocks)
    vars_ = list(state.vars)
    for e in moves:
        for var, expr in e.updates:
            value = expr(vars_)
            if value != int(value):
                raise RangeError(f"update of {net.var_names[var]} yields non-integer {value}")
            value = int(value)
            if not net.var_lo[var] <= value <= net.var_hi[var]:
                raise RangeError(
                    f"update of {net.var_names[var]} to {value} leaves range "
                    f"[{net.var_lo[var]}, {net.var_hi[var]}]"
                )
            vars_[var] = value
        for x in e.resets:
            clocks[x] = 0.0
        locs[e.comp] = e.target
    new = SystemState(tuple(locs), tuple(clocks), tuple(vars_), state.elapsed)
    for e in moves:
        loc = net.locations[e.target]
        for b in loc.invariant:
            if not bound_holds(b, new.clocks[b.clock]):
                raise SemanticError(
                    f"target invariant {b.describe(net)} violated by {net.edge_label(e)}"
                )
    return new


def edge_window(
    net: ResolvedNetwork, state: SystemState, edge: ResolvedEdge, horizon: float
) -> tuple[float, float] | None:
    """Delays in ``[0, horizon]`` after which the clock part of ``edge``'s
    guard holds (variables are constant under delay). ``None`` if empty."""
    lo, hi = 0.0, horizon
    for g in edge.guard.var_conjuncts:
        if not g(state.vars):
            return None
    for b in edge.guard.clock_conjuncts:
        x = state.clocks[b.clock]
        r = net.rate(state.locations, b.clock)
        if r == 0:
            if not bound_holds(b, x):
                return None
            continue
        t = (b.bound - x) / r
        if b.is_lower:
            lo = max(lo, t)
        else:
            hi = min(hi, t)
    if lo > hi + CLOCK_EPS:
        return None
    return lo, max(lo, hi)


def earliest_fire(net: ResolvedNetwork, state: SystemState, comp: int, dmax: float) -> float:
    """Smallest delay at which ``comp`` has an own edge enabled, or inf."""
    best = INF
    for ei in net.out_edges[state.locations[comp]]:
        e = net.edges[ei]
        if e.direction == RECEIVE or e.weight <= 0:
            continue
        w = edge_window(net, state, e, dmax)
        if w is not None:
            best = min(best, w[0])
    return best


def replay(network, initial: SystemState, steps: Iterable) -> list[SystemState]:
    """Replay (delay, choice, receivers) triples; returns the visited states."""
    net = _net(network)
    states = [initial]
    s = initial
    for delay, choice, receivers in steps:
        s = apply_delay(net, s, delay)
        if choice is not None:
            s = apply_edge(net, s, choice, receivers)
        states.append(s)
    return states
