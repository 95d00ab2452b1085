"""Unslotted IEEE 802.15.4 CSMA/CA with a scalable backoff unit.

One time unit is one PHY symbol. At 868 MHz the PHY runs BPSK at 20 kbps
with one bit per symbol, so a symbol lasts 50 us and an octet 8 symbols.

A node waits a uniform initial offset, then loops through

    BO_k   uniform backoff on [0, (2^k - 1) * UnitBackoff]   (k = BE)
    CCA    channel assessment, decided at its end on ``nt == 0``
    TA     rx-to-tx turnaround; the channel still looks idle meanwhile
    TX     frame on air; ``col`` records any overlap with another frame
    ACK    acknowledgment wait; success iff ``col == 0``

A busy CCA backs off again with ``BE := min(BE + 1, MaxBE)``; a missing
acknowledgment restarts at ``BE = MinBE`` until ``MaxFrameRetries``
retransmissions are used up (then ``FAIL``). Backoff is continuous here;
the standard draws an integer number of backoff periods.

The energy clock integrates supply power: TX_POWER * SUPPLY in TX and
RX_POWER * SUPPLY while listening (CCA, turnaround, acknowledgment wait),
in mW per symbol.
"""
from __future__ import annotations

from dataclasses import dataclass

from ..game import GameConfig, StrategySpace
from ..model import Automaton, Edge, Location, VariableDecl

LABEL = "UnitBackoff"

# -- PHY/MAC constants (868 MHz band, 20 kbps) ------------------------------
SYMBOLS_PER_OCTET = 8          # BPSK: 1 bit per symbol
A_UNIT_BACKOFF = 20            # aUnitBackoffPeriod, the standard's UnitBackoff
CCA_TIME = 8                   # 8 symbol periods
TURNAROUND = 12                # aTurnaroundTime
PHY_OVERHEAD_OCTETS = 6        # preamble 4 + SFD 1 + PHR 1
FRAME_OCTETS = 35              # 25 header + 10 payload
FRAME_TIME = (FRAME_OCTETS + PHY_OVERHEAD_OCTETS) * SYMBOLS_PER_OCTET   # 328
# macAckWaitDuration = aUnitBackoffPeriod + aTurnaroundTime + phySHRDuration
#                      + 6 * phySymbolsPerOctet = 20 + 12 + 40 + 48
ACK_WAIT = A_UNIT_BACKOFF + TURNAROUND + 40 + 6 * SYMBOLS_PER_OCTET       # 120
MIN_BE = 3
MAX_BE = 5
MAX_FRAME_RETRIES = 3
TX_POWER_MA = 54
RX_POWER_MA = 26
SUPPLY_V = 3


# (initial_offset_max, time_bound) by coalition size; see calibrated()
BUDGETS = {1: (FRAME_TIME // 2, 1100), 2: (FRAME_TIME, 1400)}


@dataclass(frozen=True)
class CsmaCaParams:
    unit_backoff: int = A_UNIT_BACKOFF
    min_be: int = MIN_BE
    max_be: int = MAX_BE
    max_frame_retries: int = MAX_FRAME_RETRIES
    cca_time: int = CCA_TIME
    turnaround: int = TURNAROUND
    frame_time: int = FRAME_TIME
    ack_wait: int = ACK_WAIT
    tx_power: int = TX_POWER_MA
    rx_power: int = RX_POWER_MA
    supply: int = SUPPLY_V
    initial_offset_max: int = BUDGETS[1][0]
    # calibrated, see calibrated()
    time_bound: float = BUDGETS[1][1]
    energy_bound: float = 140_000
    coalition_size: int = 1

    def __post_init__(self):
        if not 0 <= self.min_be <= self.max_be:
            raise ValueError(f"need 0 <= min_be <= max_be, got {self.min_be}, {self.max_be}")
        if self.unit_backoff < 0:
            raise ValueError("unit_backoff must be nonnegative")
        for name in ("cca_time", "turnaround", "frame_time", "ack_wait", "initial_offset_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.max_frame_retries < 0:
            raise ValueError("max_frame_retries must be nonnegative")
        if self.tx_power < 0 or self.rx_power < 0 or self.supply <= 0:
            raise ValueError("power figures must be nonnegative")
        if self.time_bound <= 0 or self.energy_bound <= 0:
            raise ValueError("goal bounds must be positive")
        if self.coalition_size < 1:
            raise ValueError("coalition_size must be at least 1")


def calibrated(coalition_size: int = 1, **overrides) -> CsmaCaParams:
    """Parameters with the offset and deadline calibrated for ``coalition_size``.

    The deadline and the spread of the initial offsets are not fixed by the
    protocol. Single players get a tight schedule (offsets within half a
    frame, 1100 symbols), under which transmitting right after a CCA pays
    off. Coalitions get a looser one (a full frame, 1400 symbols), under
    which coalition members gain from spacing out their own attempts.
    """
    offset, deadline = BUDGETS[min(coalition_size, 2)]
    fields = dict(initial_offset_max=offset, time_bound=deadline, coalition_size=coalition_size)
    fields.update(overrides)
    return CsmaCaParams(**fields)


def default_grid(step: int = 5, top: int = 50) -> StrategySpace:
    return StrategySpace(LABEL, tuple(range(0, top + 1, step)))


def node_template(params: CsmaCaParams = CsmaCaParams()) -> Automaton:
    tx = {"energy": "TXP * SUPPLY"}
    rx = {"energy": "RXP * SUPPLY"}
    idle = {"energy": 0}
    bes = range(params.min_be, params.max_be + 1)
    locations = [Location("INITIAL", invariant="x <= OFFSET", rates=idle)]
    locations += [
        Location(f"BO{k}", invariant=f"x <= {2**k - 1} * {LABEL}", rates=idle) for k in bes
    ]
    locations += [
        Location("CCA", invariant="x <= CCA", rates=rx),
        Location("TA", invariant="x <= TURNAROUND", rates=rx),
        Location("TX", invariant="x <= FRAME", rates=tx),
        Location("ACK", invariant="x <= ACKWAIT", rates=rx),
        Location("DONE", rates=idle),
        Location("FAIL", rates=idle),
    ]
    first = f"BO{params.min_be}"
    edges = [Edge("INITIAL", first, resets=("x",), updates="be = MINBE", label="start")]
    edges += [Edge(f"BO{k}", "CCA", resets=("x",), label=f"backoff{k}") for k in bes]
    for k in bes:
        nxt = min(k + 1, params.max_be)
        edges.append(
            Edge("CCA", f"BO{nxt}", guard=f"x >= CCA && nt > 0 && be == {k}",
                 updates=f"be = {nxt}", resets=("x",), label=f"busy{k}")
        )
    edges += [
        Edge("CCA", "TA", guard="x >= CCA && nt == 0", resets=("x",), label="clear"),
        Edge("TA", "TX", guard="x >= TURNAROUND", sync="busy!",
             updates="col = nt > 0, nt = nt + 1", resets=("x",), label="transmit"),
        Edge("TX", "TX", sync="busy?", updates="col = 1", label="overlap"),
        Edge("TX", "ACK", guard="x >= FRAME", updates="nt = nt - 1", resets=("x",),
             label="sent"),
        Edge("ACK", "DONE", guard="x >= ACKWAIT && col == 0", updates="ns = 1", label="acked"),
        Edge("ACK", first, guard="x >= ACKWAIT && col == 1 && nr < RETRIES",
             updates="nr = nr + 1, col = 0, be = MINBE", resets=("x",), label="retry"),
        Edge("ACK", "FAIL", guard="x >= ACKWAIT && col == 1 && nr >= RETRIES",
             label="give_up"),
    ]
    return Automaton(
        name="Node",
        locations=tuple(locations),
        initial="INITIAL",
        clocks=("x", "time", "energy"),
        variables=(
            VariableDecl("be", "MINBE", "MINBE", "MAXBE"),
            VariableDecl("nr", 0, 0, "RETRIES"),
            VariableDecl("col", 0, 0, 1),
            VariableDecl("ns", 0, 0, 1),
        ),
        edges=tuple(edges),
        params={
            LABEL: params.unit_backoff,
            "MINBE": params.min_be,
            "MAXBE": params.max_be,
            "RETRIES": params.max_frame_retries,
            "CCA": params.cca_time,
            "TURNAROUND": params.turnaround,
            "FRAME": params.frame_time,
            "ACKWAIT": params.ack_wait,
            "TXP": params.tx_power,
            "RXP": params.rx_power,
            "SUPPLY": params.supply,
            "OFFSET": params.initial_offset_max,
        },
    )


def goal_formula(params: CsmaCaParams = CsmaCaParams(), node: int = 0) -> str:
    """Deliver one acknowledged frame within the time and energy budgets."""
    return (
        f"F[Node{node}.time<={params.time_bound:g}]"
        f"(Node{node}.ns >= 1 && Node{node}.energy <= {params.energy_bound:g})"
    )


def build_csmaca(
    N: int,
    params: CsmaCaParams = CsmaCaParams(),
    strategies: StrategySpace | None = None,
) -> GameConfig:
    if N < 2:
        raise ValueError(f"CSMA/CA needs at least 2 nodes, got {N}")
    if params.coalition_size >= N:
        raise ValueError(f"coalition size {params.coalition_size} leaves no opponents among {N}")
    return GameConfig(
        name="csmaca",
        node=node_template(params),
        players=N,
        strategies=strategies or default_grid(),
        goal=goal_formula(params),
        shared_vars=(VariableDecl("nt", 0, 0, "N"),),
        channels=("busy",),
        coalition_size=params.coalition_size,
    )
