"""Networks of weighted timed automata with integer variables.

Models are written at the *name* level (:class:`Automaton`, :class:`Network`)
with guards, updates and invariants as expression strings. A network is
fully concrete: parameters are bound when it is built, and
:meth:`Network.resolve` turns it into the index-based
:class:`ResolvedNetwork` that the semantics and the simulator run on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .expr import (
    CMP_GE,
    CMP_GT,
    CMP_SYMBOL,
    Expr,
    ExpressionError,
    Ref,
    as_clock_bound,
    compile_expr,
    eval_const,
    parse,
    parse_updates,
    split_conjuncts,
)

INT_MIN = -(2**31)
INT_MAX = 2**31 - 1


class ModelError(ValueError):
    """A network failed validation; ``diagnostics`` lists every problem."""

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = list(diagnostics)
        super().__init__("invalid model:\n  " + "\n  ".join(self.diagnostics))


@dataclass(frozen=True)
class VariableDecl:
    name: str
    init: int = 0
    lo: int = INT_MIN
    hi: int = INT_MAX


@dataclass(frozen=True)
class Location:
    name: str
    invariant: str = ""
    rates: Mapping[str, int | float | str] = field(default_factory=dict)
    urgent: bool = False
    exp_rate: float | str | None = None


@dataclass(frozen=True)
class Edge:
    source: str
    target: str
    guard: str = ""
    resets: tuple[str, ...] = ()
    updates: str = ""
    sync: str | None = None  # "chan!" or "chan?"
    weight: float | str = 1.0
    label: str = ""


@dataclass(frozen=True)
class Automaton:
    name: str
    locations: tuple[Location, ...]
    initial: str
    clocks: tuple[str, ...] = ()
    variables: tuple[VariableDecl, ...] = ()
    edges: tuple[Edge, ...] = ()
    params: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class Network:
    components: tuple[Automaton, ...]
    shared_vars: tuple[VariableDecl, ...] = ()
    channels: tuple[str, ...] = ()

    def resolve(self) -> "ResolvedNetwork":
        cached = self.__dict__.get("_resolved")
        if cached is None:
            cached = _resolve(self)
            if cached.diagnostics:
                raise ModelError(cached.diagnostics)
            object.__setattr__(self, "_resolved", cached)
        return cached


# resolved, index-level structures -------------------------------------------


@dataclass(frozen=True)
class AtomicBound:
    clock: int
    op: int  # one of expr.CMP_*
    bound: float

    @property
    def is_lower(self) -> bool:
        return self.op in (CMP_GT, CMP_GE)

    def describe(self, net: "ResolvedNetwork") -> str:
        return f"{net.clock_names[self.clock]} {CMP_SYMBOL[self.op]} {self.bound:g}"


@dataclass(frozen=True)
class Guard:
    clock_conjuncts: tuple[AtomicBound, ...] = ()
    var_conjuncts: tuple[Expr, ...] = ()


EMIT, RECEIVE = "emit", "receive"


@dataclass(frozen=True)
class ResolvedEdge:
    index: int
    comp: int
    source: int
    target: int
    guard: Guard
    resets: tuple[int, ...]
    updates: tuple[tuple[int, Expr], ...]
    channel: int  # -1 when internal
    direction: str | None
    weight: float
    label: str


@dataclass(frozen=True)
class ResolvedLocation:
    index: int
    comp: int
    name: str
    invariant: tuple[AtomicBound, ...]
    rates: tuple[float, ...]  # one entry per clock in the network
    urgent: bool
    exp_rate: float


@dataclass
class ResolvedNetwork:
    source: Network
    comp_names: list[str]
    locations: list[ResolvedLocation]
    comp_locations: list[list[int]]
    initial: list[int]
    clock_names: list[str]
    clock_owner: list[int]
    var_names: list[str]
    var_init: list[int]
    var_lo: list[int]
    var_hi: list[int]
    channels: list[str]
    edges: list[ResolvedEdge]
    out_edges: list[list[int]]  # by location
    diagnostics: list[str]
    _names: dict[str, Ref] = field(default_factory=dict, repr=False)

    @property
    def n_components(self) -> int:
        return len(self.comp_names)

    def lookup(self, name: str) -> Ref | None:
        """Resolve a qualified name (``Node0.x``, ``nt``, ``Node0.TRANSMIT``)."""
        return self._names.get(name)

    def clock_index(self, name: str) -> int:
        ref = self.lookup(name)
        if ref is None or ref.kind != "clock":
            raise KeyError(f"no clock named {name!r}")
        return ref.index

    def var_index(self, name: str) -> int:
        ref = self.lookup(name)
        if ref is None or ref.kind != "var":
            raise KeyError(f"no variable named {name!r}")
        return ref.index

    def location_index(self, name: str) -> int:
        ref = self.lookup(name)
        if ref is None or ref.kind != "loc":
            raise KeyError(f"no location named {name!r}")
        return ref.index

    def rate(self, locations, clock: int) -> float:
        return self.locations[locations[self.clock_owner[clock]]].rates[clock]

    def edge_label(self, edge: ResolvedEdge) -> str:
        if edge.label:
            return f"{self.comp_names[edge.comp]}.{edge.label}"
        src = self.locations[edge.source].name
        dst = self.locations[edge.target].name
        return f"{self.comp_names[edge.comp]}.{src}->{dst}"


def _resolve(network: Network) -> ResolvedNetwork:
    diags: list[str] = []
    names: dict[str, Ref] = {}
    comp_names = [a.name for a in network.components]
    if len(set(comp_names)) != len(comp_names):
        diags.append("duplicate component names")
    if not network.components:
        diags.append("network has no components")

    var_names: list[str] = []
    var_init: list[int] = []
    var_lo: list[int] = []
    var_hi: list[int] = []

    def declare_var(qual: str, decl: VariableDecl, where: str) -> int:
        if qual in names:
            diags.append(f"{where}: duplicate declaration of {decl.name!r}")
        if decl.lo > decl.hi:
            diags.append(f"{where}: variable {decl.name!r} has empty range [{decl.lo}, {decl.hi}]")
        elif not decl.lo <= decl.init <= decl.hi:
            diags.append(
                f"{where}: initial value {decl.init} of {decl.name!r} outside [{decl.lo}, {decl.hi}]"
            )
        idx = len(var_names)
        var_names.append(qual)
        var_init.append(int(decl.init))
        var_lo.append(int(decl.lo))
        var_hi.append(int(decl.hi))
        names[qual] = Ref("var", index=idx)
        return idx

    for decl in network.shared_vars:
        declare_var(decl.name, decl, "shared")

    channels = list(network.channels)
    if len(set(channels)) != len(channels):
        diags.append("duplicate channel declarations")
    chan_index = {c: i for i, c in enumerate(channels)}

    clock_names: list[str] = []
    clock_owner: list[int] = []
    local_names: list[dict[str, Ref]] = []
    for ci, aut in enumerate(network.components):
        local: dict[str, Ref] = {}
        for clk in aut.clocks:
            qual = f"{aut.name}.{clk}"
            if clk in local:
                diags.append(f"{aut.name}: duplicate clock {clk!r}")
            ref = Ref("clock", index=len(clock_names))
            clock_names.append(qual)
            clock_owner.append(ci)
            local[clk] = ref
            names[qual] = ref
        for decl in aut.variables:
            if decl.name in local:
                diags.append(f"{aut.name}: {decl.name!r} declared as both clock and variable")
            idx = declare_var(f"{aut.name}.{decl.name}", decl, aut.name)
            local[decl.name] = Ref("var", index=idx)
        local_names.append(local)

    locations: list[ResolvedLocation] = []
    comp_locations: list[list[int]] = []
    initial: list[int] = []
    # location refs must exist before guards are compiled (formulas may name them)
    loc_ids: list[dict[str, int]] = []
    for ci, aut in enumerate(network.components):
        ids: dict[str, int] = {}
        for loc in aut.locations:
            if loc.name in ids:
                diags.append(f"{aut.name}: duplicate location {loc.name!r}")
                continue
            ids[loc.name] = len(locations) + len(ids)
            names[f"{aut.name}.{loc.name}"] = Ref("loc", index=ids[loc.name], comp=ci)
        loc_ids.append(ids)
        base = len(locations)
        comp_locations.append([])
        for k, loc in enumerate(dict((l.name, l) for l in aut.locations).values()):
            where = f"{aut.name}.{loc.name}"
            scope = _scope(names, local_names[ci], aut.params)
            invariant = _bounds(loc.invariant, scope, where, diags, upper_only=True)
            rates = [0.0] * len(clock_names)
            for clk, ref in local_names[ci].items():
                if ref.kind == "clock":
                    rates[ref.index] = 1.0
            for clk, rate_text in dict(loc.rates).items():
                ref = local_names[ci].get(clk)
                if ref is None or ref.kind != "clock":
                    diags.append(f"{where}: rate given for undeclared clock {clk!r}")
                    continue
                try:
                    r = eval_const(rate_text, aut.params)
                except ExpressionError as exc:
                    diags.append(f"{where}: {exc}")
                    continue
                if r < 0 or r != int(r):
                    diags.append(f"{where}: rate of {clk!r} must be a nonnegative integer, got {r:g}")
                rates[ref.index] = float(r)
            exp_rate = 1.0
            if loc.exp_rate is not None:
                try:
                    exp_rate = eval_const(loc.exp_rate, aut.params)
                except ExpressionError as exc:
                    diags.append(f"{where}: {exc}")
                if not exp_rate > 0:
                    diags.append(f"{where}: exponential rate must be positive")
            locations.append(
                ResolvedLocation(
                    index=base + k, comp=ci, name=loc.name, invariant=tuple(invariant),
                    rates=tuple(rates), urgent=bool(loc.urgent), exp_rate=exp_rate,
                )
            )
            comp_locations[ci].append(base + k)
        if aut.initial not in ids:
            diags.append(f"{aut.name}: initial location {aut.initial!r} does not exist")
            initial.append(base)
        else:
            initial.append(ids[aut.initial])

    edges: list[ResolvedEdge] = []
    for ci, aut in enumerate(network.components):
        scope = _scope(names, local_names[ci], aut.params)
        for ei, e in enumerate(aut.edges):
            where = f"{aut.name} edge #{ei} ({e.source} -> {e.target})"
            src = loc_ids[ci].get(e.source)
            dst = loc_ids[ci].get(e.target)
            if src is None:
                diags.append(f"{where}: source location {e.source!r} does not exist")
            if dst is None:
                diags.append(f"{where}: target location {e.target!r} does not exist")
            clock_part: list[AtomicBound] = []
            var_part: list[Expr] = []
            if e.guard.strip():
                try:
                    for conj in split_conjuncts(parse(e.guard)):
                        cb = as_clock_bound(conj, scope)
                        if cb is not None:
                            clock_part.append(_atomic(cb, where, diags))
                        else:
                            var_part.append(compile_expr(conj, scope))
                except ExpressionError as exc:
                    diags.append(f"{where}: guard: {exc}")
            resets = []
            for clk in e.resets:
                ref = local_names[ci].get(clk)
                if ref is None or ref.kind != "clock":
                    diags.append(f"{where}: reset of undeclared clock {clk!r}")
                else:
                    resets.append(ref.index)
            updates = []
            if e.updates.strip():
                try:
                    for name, rhs in parse_updates(e.updates):
                        ref = scope(name)
                        if ref is None or ref.kind != "var":
                            diags.append(f"{where}: update of undeclared variable {name!r}")
                            continue
                        updates.append((ref.index, compile_expr(rhs, scope)))
                except ExpressionError as exc:
                    diags.append(f"{where}: update: {exc}")
            channel, direction = -1, None
            if e.sync:
                s = e.sync.strip()
                chan, mark = s[:-1], s[-1:]
                if mark not in "!?" or not chan:
                    diags.append(f"{where}: malformed sync {e.sync!r}")
                elif chan not in chan_index:
                    diags.append(f"{where}: undeclared channel {chan!r}")
                else:
                    channel = chan_index[chan]
                    direction = EMIT if mark == "!" else RECEIVE
            try:
                weight = eval_const(e.weight, aut.params)
                if weight < 0:
                    diags.append(f"{where}: negative weight {weight:g}")
            except ExpressionError as exc:
                diags.append(f"{where}: weight: {exc}")
                weight = 1.0
            edges.append(
                ResolvedEdge(
                    index=len(edges), comp=ci, source=src if src is not None else -1,
                    target=dst if dst is not None else -1,
                    guard=Guard(tuple(clock_part), tuple(var_part)), resets=tuple(resets),
                    updates=tuple(updates), channel=channel, direction=direction,
                    weight=weight, label=e.label,
                )
            )

    out_edges: list[list[int]] = [[] for _ in locations]
    for e in edges:
        if e.source >= 0:
            out_edges[e.source].append(e.index)

    return ResolvedNetwork(
        source=network, comp_names=comp_names, locations=locations,
        comp_locations=comp_locations, initial=initial, clock_names=clock_names,
        clock_owner=clock_owner, var_names=var_names, var_init=var_init, var_lo=var_lo,
        var_hi=var_hi, channels=channels, edges=edges, out_edges=out_edges,
        diagnostics=diags, _names=names,
    )


def _scope(names: dict[str, Ref], local: dict[str, Ref], params: Mapping[str, float]):
    def lookup(name: str) -> Ref | None:
        if name in local:
            return local[name]
        if name in params:
            return Ref("const", value=float(params[name]))
        return names.get(name)

    return lookup


def _atomic(cb: tuple[int, int, float], where: str, diags: list[str]) -> AtomicBound:
    clock, op, bound = cb
    if bound < 0 or not math.isfinite(bound) or bound != int(bound):
        diags.append(f"{where}: clock bound must be a nonnegative integer, got {bound:g}")
    return AtomicBound(clock, op, float(bound))


def _bounds(text: str, scope, where: str, diags: list[str], upper_only: bool) -> list[AtomicBound]:
    out: list[AtomicBound] = []
    if not text.strip():
        return out
    try:
        for conj in split_conjuncts(parse(text)):
            cb = as_clock_bound(conj, scope)
            if cb is None:
                diags.append(f"{where}: invariant conjunct {ast_text(conj)!r} is not a clock bound")
                continue
            b = _atomic(cb, where, diags)
            if upper_only and b.is_lower:
                diags.append(f"{where}: invariant {ast_text(conj)!r} is a lower bound")
                continue
            out.append(b)
    except ExpressionError as exc:
        diags.append(f"{where}: invariant: {exc}")
    return out


def ast_text(node) -> str:
    import ast

    return ast.unparse(node)


def validate(network: Network) -> list[str]:
    """Return human-readable diagnostics; an empty list means well-formed."""
    return list(_resolve(network).diagnostics)


@dataclass(frozen=True)
class SystemState:
    """Joint location vector, clock and variable valuations, global time."""

    locations: tuple[int, ...]
    clocks: tuple[float, ...]
    vars: tuple[int, ...]
    elapsed: float = 0.0


def initial_state(net: ResolvedNetwork | Network) -> SystemState:
    if isinstance(net, Network):
        net = net.resolve()
    return SystemState(
        locations=tuple(net.initial),
        clocks=tuple(0.0 for _ in net.clock_names),
        vars=tuple(net.var_init),
        elapsed=0.0,
    )
