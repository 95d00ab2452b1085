"""Race-based stochastic semantics (reference implementation).

Each race step works as follows, and the compiled engine in
:mod:`nashsmc.engine` follows the same order of random draws:

1. every component computes the largest delay its invariant allows;
2. components in index order draw their delay: components that can fire an
   own edge at some delay ``lo <= dmax`` draw uniformly on ``[lo, dmax]``
   (or ``lo + Exp(rate)`` if ``dmax`` is infinite); the others sit out
   without drawing;
3. the smallest delay wins; exact ties draw once more to pick a winner;
   if nobody can fire before the global invariant limit, time advances to
   that limit and the race restarts (a delay-only step);
4. the winner picks one enabled own edge with probability proportional to
   its weight (one draw when there is more than one), then each other
   component with enabled receive edges on an emitted channel picks one of
   them the same way, in index order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .model import Network, ResolvedEdge, ResolvedNetwork, SystemState, initial_state
from .pwctl import VIOLATED, StopCondition, Verdict
from .rng import RngStream
from .semantics import (
    INF,
    apply_delay,
    component_max_delay,
    earliest_fire,
    fire,
    local_enabled,
)

DEFAULT_MAX_STEPS = 10**6
DEADLOCK = "deadlock"
TIMELOCK = "timelock"
STEP_CAP = "step_cap"


@dataclass(frozen=True)
class RunStep:
    delay: float
    fired: tuple[int, ResolvedEdge] | None
    post_state: SystemState
    receivers: dict[int, ResolvedEdge] = field(default_factory=dict)


@dataclass
class Run:
    initial: SystemState
    steps: list[RunStep]
    truncated: bool = False
    reason: str = ""
    verdict: Verdict | None = None

    @property
    def states(self) -> list[SystemState]:
        return [self.initial] + [s.post_state for s in self.steps]


class Stuck(Exception):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(reason)


def sample_component_delay(
    network, state: SystemState, comp: int, rng: RngStream, dmax: float | None = None
) -> float:
    """Delay proposed by ``comp`` in the race, ``inf`` if it cannot fire."""
    net = network.resolve() if isinstance(network, Network) else network
    if dmax is None:
        dmax = component_max_delay(net, state, comp)
    lo = earliest_fire(net, state, comp, dmax)
    if lo == INF:
        return INF
    if dmax < INF:
        return rng.uniform(lo, dmax)
    return lo + rng.exponential(net.locations[state.locations[comp]].exp_rate)


def weighted_pick(options: list[ResolvedEdge], rng: RngStream) -> ResolvedEdge:
    if len(options) == 1:
        return options[0]
    total = 0.0
    for e in options:
        total += e.weight
    target = rng.random() * total
    acc = 0.0
    for e in options:
        acc += e.weight
        if target < acc:
            return e
    return options[-1]


def race_step(network, state: SystemState, rng: RngStream) -> RunStep:
    net: ResolvedNetwork = network.resolve() if isinstance(network, Network) else network
    n = net.n_components
    dmaxes = [component_max_delay(net, state, c) for c in range(n)]
    gmax = min(dmaxes, default=INF)
    proposals = [sample_component_delay(net, state, c, rng, dmaxes[c]) for c in range(n)]
    best = min(proposals, default=INF)
    winner = -1
    if best == INF or best > gmax:
        if gmax == INF:
            raise Stuck(DEADLOCK)
        if gmax == 0.0:
            raise Stuck(TIMELOCK)
        delay = gmax
    else:
        delay = best
        tied = [c for c in range(n) if proposals[c] == best]
        winner = tied[0]
        if len(tied) > 1:
            winner = tied[min(int(rng.random() * len(tied)), len(tied) - 1)]
    moved = apply_delay(net, state, delay)
    if winner < 0:
        return RunStep(delay, None, moved)
    options = local_enabled(net, moved, winner)
    if not options:
        return RunStep(delay, None, moved)
    edge = weighted_pick(options, rng)
    moves = [edge]
    receivers: dict[int, ResolvedEdge] = {}
    if edge.channel >= 0 and edge.direction == "emit":
        for c in range(n):
            if c == winner:
                continue
            opts = local_enabled(net, moved, c, receive=True, channel=edge.channel)
            if opts:
                receivers[c] = weighted_pick(opts, rng)
                moves.append(receivers[c])
    post = fire(net, moved, moves)
    return RunStep(delay, (winner, edge), post, receivers)


def simulate(
    network,
    stop: StopCondition,
    rng: RngStream,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> Run:
    """One random run, stopped by ``stop`` or truncated."""
    net = network.resolve() if isinstance(network, Network) else network
    state = initial_state(net)
    run = Run(initial=state, steps=[])
    verdict = stop.start(state)
    if verdict is not None:
        run.verdict = verdict
        return run
    for _ in range(max_steps):
        try:
            step = race_step(net, state, rng)
        except Stuck as stuck:
            run.truncated, run.reason = True, stuck.reason
            if stuck.reason == DEADLOCK:
                run.verdict = stop.finish_diverging(state)
            else:
                run.verdict = Verdict(VIOLATED, None, stuck.reason)
            return run
        run.steps.append(step)
        verdict = stop.step(state, step.delay, step.post_state)
        state = step.post_state
        if verdict is not None:
            run.verdict = verdict
            return run
    run.truncated, run.reason = True, STEP_CAP
    run.verdict = Verdict(VIOLATED, None, STEP_CAP)
    return run


def run_is_consistent(network, run: Run) -> bool:
    """Replay ``run`` through the deterministic semantics."""
    from .semantics import apply_edge

    net = network.resolve() if isinstance(network, Network) else network
    s = run.initial
    for step in run.steps:
        s = apply_delay(net, s, step.delay)
        if step.fired is not None:
            s = apply_edge(net, s, step.fired, step.receivers)
        if s != step.post_state:
            return False
    return True

