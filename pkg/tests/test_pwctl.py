import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nashsmc.engine import CompiledModel
from nashsmc.game import build_system
from nashsmc.model import Automaton, Edge, Location, initial_state
from nashsmc.protocols import build_aloha, build_csmaca
from nashsmc.pwctl import (SATISFIED, VIOLATED, FormulaError, FormulaStop, PwctlFormula,
                           offline_verdict)
from nashsmc.race import simulate
from nashsmc.rng import RngStream

from conftest import net_of


def counter():
    """Clock ``x`` runs in A; at x = 2 the automaton jumps to B, where ``e``
    (an energy-like clock) starts running."""
    return Automaton(
        "N",
        (Location("A", invariant="x <= 2", rates={"e": 0}), Location("B", rates={"e": 1}, exp_rate=1.0)),
        "A", clocks=("x", "t", "e"),
        edges=(Edge("A", "B", guard="x >= 2", label="go"),),
    )


class TestParse:
    def test_roundtrip_text(self):
        f = PwctlFormula.parse("F[Node0.time<=50](Node0.ns >= 1 && Node0.energy <= 3)")
        assert f.observer == "Node0.time" and f.bound == 50
        assert PwctlFormula.parse(f.text) == f

    @pytest.mark.parametrize("bad", ["G[t<=3](x)", "F[t<=-1](x)", "F[t<=abc](x)", "F(t<=3)"])
    def test_rejects(self, bad):
        with pytest.raises(FormulaError):
            PwctlFormula.parse(bad)

    def test_observer_must_be_clock(self):
        net = net_of(counter())
        with pytest.raises(FormulaError):
            PwctlFormula.parse("F[N.A<=3](N.x >= 1)").bind(net)


class TestMonitor:
    def test_satisfied_mid_delay(self):
        # x >= 1.5 first holds 1.5 into the first delay
        net = net_of(counter())
        f = PwctlFormula.parse("F[N.t<=10](N.x >= 1.5)").bind(net)
        run = simulate(net, FormulaStop(f), RngStream(0))
        assert run.verdict.outcome == SATISFIED
        assert run.verdict.witness_time == pytest.approx(1.5)

    def test_bound_too_small(self):
        net = net_of(counter())
        f = PwctlFormula.parse("F[N.t<=1](N.x >= 1.5)").bind(net)
        assert simulate(net, FormulaStop(f), RngStream(0)).verdict.outcome == VIOLATED

    def test_exact_verdict_on_deadlock(self):
        # after the jump nothing ever fires; e grows from 0 in B, so e >= 0.5
        # is reached 0.5 after the jump, at global time 2.5
        net = net_of(Automaton(
            "N", (Location("A", invariant="x <= 2", rates={"e": 0}), Location("B", rates={"e": 1})),
            "A", clocks=("x", "t", "e"), edges=(Edge("A", "B", guard="x >= 2"),)))
        f = PwctlFormula.parse("F[N.t<=3](N.e >= 0.5)").bind(net)
        v = simulate(net, FormulaStop(f), RngStream(0)).verdict
        assert v.outcome == SATISFIED and v.witness_time == pytest.approx(2.5)
        f2 = PwctlFormula.parse("F[N.t<=2.4](N.e >= 0.5)").bind(net)
        assert simulate(net, FormulaStop(f2), RngStream(0)).verdict.outcome == VIOLATED

    def test_offline_matches_hand_trace(self):
        net = net_of(counter())
        f = PwctlFormula.parse("F[N.t<=10](N.x >= 1.5)").bind(net)
        s0 = initial_state(net.resolve())
        v = offline_verdict(f, [s0], [math.inf])
        assert v.outcome == SATISFIED and v.witness_time == pytest.approx(1.5)


def _offline(formula, run):
    delays = [s.delay for s in run.steps]
    if run.reason == "deadlock":
        delays.append(math.inf)
    return offline_verdict(formula, run.states, delays)


@pytest.mark.parametrize("builder,pd,pc", [(build_aloha, 0.3, 0.7), (build_csmaca, 0, 10)])
def test_online_offline_agree(builder, pd, pc):
    cfg = builder(3)
    net = build_system(cfg, pd, pc)
    f = cfg.formula.bind(net)
    model = CompiledModel(net, f)
    for i in range(300):
        run = model.run_traced(3, i)
        off = _offline(f, run)
        assert off.outcome == run.verdict.outcome
        if off.outcome == SATISFIED:
            assert off.witness_time == pytest.approx(run.verdict.witness_time, abs=1e-9)


@settings(max_examples=30)
@given(st.floats(0.1, 20), st.floats(0.1, 5))
def test_threshold_crossing(bound, level):
    net = net_of(counter())
    f = PwctlFormula.parse(f"F[N.t<={bound}](N.x >= {level} && N.x <= 2)").bind(net)
    v = simulate(net, FormulaStop(f), RngStream(1)).verdict
    expect = level <= 2 and level <= bound
    assert v.satisfied == expect
    if expect:
        assert v.witness_time == pytest.approx(level)
