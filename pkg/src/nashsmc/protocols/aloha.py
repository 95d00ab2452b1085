"""Unslotted k-persistent Aloha with collision detection.

Each node waits a uniform offset in ``INITIAL``, then decides once per slot
whether to transmit (weight ``TransmitProb``) or to wait another slot.
Starting a transmission broadcasts ``busy``; a node that is transmitting
when it hears ``busy`` aborts at once, and a node that starts while the
medium is taken aborts at once as well (through the urgent ``COLLIDE``).
``nt`` counts nodes in ``TRANSMIT``; ``ns`` counts the node's delivered
frames; ``energy`` only runs in ``TRANSMIT``.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..game import GameConfig, StrategySpace
from ..model import Automaton, Edge, Location, VariableDecl

LABEL = "TransmitProb"


@dataclass(frozen=True)
class AlohaParams:
    transmit_prob: float = 0.5
    # a frame takes two time units and a slot three; with the energy budget
    # of 3 a node survives being cut off once but not twice
    slot_len: int = 3
    frame_tx_time: int = 2
    initial_offset_max: int = 3
    time_bound: float = 50
    energy_bound: float = 3
    frames_to_send: int = 1

    def __post_init__(self):
        if not 0 < self.transmit_prob <= 1:
            raise ValueError(f"transmit_prob must lie in (0, 1], got {self.transmit_prob}")
        for name in ("slot_len", "frame_tx_time", "initial_offset_max", "frames_to_send"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.time_bound <= 0 or self.energy_bound <= 0:
            raise ValueError("goal bounds must be positive")


def default_grid(points: int = 20) -> StrategySpace:
    """``points`` values from 1/points to 1."""
    return StrategySpace(LABEL, tuple(round((i + 1) / points, 10) for i in range(points)))


def node_template(params: AlohaParams = AlohaParams()) -> Automaton:
    idle = {"energy": 0}
    locations = (
        Location("INITIAL", invariant="x <= OFFSET", rates=idle),
        Location("DECIDE", urgent=True, rates=idle),
        Location("TRANSMIT", invariant="x <= FRAME", rates={"energy": 1}),
        Location("COLLIDE", urgent=True, rates=idle),
        Location("WAIT", invariant="x <= SLOT", rates=idle),
        Location("DONE", rates=idle),
    )
    edges = (
        Edge("INITIAL", "DECIDE", resets=("x",), label="start"),
        Edge("DECIDE", "TRANSMIT", guard="nt == 0", weight=LABEL, sync="busy!",
             updates="nt = nt + 1", resets=("x",), label="transmit"),
        Edge("DECIDE", "COLLIDE", guard="nt > 0", weight=LABEL, sync="busy!",
             label="transmit_busy"),
        Edge("DECIDE", "WAIT", weight=f"1 - {LABEL}", resets=("x",), label="defer"),
        Edge("COLLIDE", "WAIT", resets=("x",), label="abort_late"),
        Edge("TRANSMIT", "DONE", guard="x >= FRAME && ns + 1 >= FRAMES",
             updates="nt = nt - 1, ns = ns + 1", label="delivered"),
        Edge("TRANSMIT", "WAIT", guard="x >= FRAME && ns + 1 < FRAMES",
             updates="nt = nt - 1, ns = ns + 1", resets=("x",), label="delivered_more"),
        Edge("TRANSMIT", "WAIT", sync="busy?", updates="nt = nt - 1", resets=("x",),
             label="collision"),
        Edge("WAIT", "DECIDE", guard="x >= SLOT", resets=("x",), label="next_slot"),
    )
    return Automaton(
        name="Node",
        locations=locations,
        initial="INITIAL",
        clocks=("x", "time", "energy"),
        variables=(VariableDecl("ns", 0, 0, "FRAMES"),),
        edges=edges,
        params={
            LABEL: params.transmit_prob,
            "SLOT": params.slot_len,
            "FRAME": params.frame_tx_time,
            "OFFSET": params.initial_offset_max,
            "FRAMES": params.frames_to_send,
        },
    )


def goal_formula(params: AlohaParams = AlohaParams(), node: int = 0) -> str:
    return (
        f"F[Node{node}.time<={params.time_bound:g}]"
        f"(Node{node}.ns >= 1 && Node{node}.energy <= {params.energy_bound:g})"
    )


def build_aloha(
    N: int,
    params: AlohaParams = AlohaParams(),
    strategies: StrategySpace | None = None,
) -> GameConfig:
    if N < 2:
        raise ValueError(f"Aloha needs at least 2 nodes, got {N}")
    return GameConfig(
        name="aloha",
        node=node_template(params),
        players=N,
        strategies=strategies or default_grid(),
        goal=goal_formula(params),
        shared_vars=(VariableDecl("nt", 0, 0, "N"),),
        channels=("busy",),
    )
