import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import nashsmc
from nashsmc.engine import CompiledModel
from nashsmc.estimation import pair_key
from nashsmc.game import build_system
from nashsmc.model import Automaton, Edge, Location, initial_state
from nashsmc.protocols import build_aloha, build_csmaca
from nashsmc.modelfile import load_config
from nashsmc.pwctl import SATISFIED, AfterSteps, FormulaStop, StopCondition, Verdict
from nashsmc.race import (DEADLOCK, TIMELOCK, Stuck, race_step, run_is_consistent,
                          sample_component_delay, simulate)
from nashsmc.rng import RngStream

from conftest import net_of, one_clock


def exp_racer(name, rate):
    return Automaton(name, (Location("A", exp_rate=rate), Location("B")), "A", clocks=("x",),
                     edges=(Edge("A", "B", label="go"),))


def test_uniform_delay_moments():
    net = net_of(one_clock(invariant="x <= 5", edges=[Edge("L0", "L1", guard="x >= 1")]))
    s = initial_state(net.resolve())
    rng = RngStream(1, 0)
    xs = np.array([sample_component_delay(net, s, 0, rng) for _ in range(20_000)])
    assert xs.min() >= 1 and xs.max() <= 5
    # mean 3, variance 16/12
    assert abs(xs.mean() - 3) < 3 * math.sqrt(16 / 12 / xs.size)


def test_exponential_delay_moments():
    net = net_of(one_clock(invariant="", exp_rate=2.0, edges=[Edge("L0", "L1", guard="x >= 1")]))
    s = initial_state(net.resolve())
    rng = RngStream(2, 0)
    xs = np.array([sample_component_delay(net, s, 0, rng) for _ in range(20_000)])
    assert xs.min() >= 1
    assert abs(xs.mean() - 1.5) < 3 * 0.5 / math.sqrt(xs.size)


def test_cannot_fire_proposes_inf():
    net = net_of(one_clock(invariant="x <= 5", edges=[Edge("L0", "L1", guard="x >= 7")]))
    s = initial_state(net.resolve())
    assert sample_component_delay(net, s, 0, RngStream(0)) == math.inf


def test_exponential_race_frequencies():
    rates = (1.0, 2.0, 5.0)
    net = net_of(*(exp_racer(f"C{i}", r) for i, r in enumerate(rates)))
    s0 = initial_state(net.resolve())
    trials = 20_000
    wins = np.zeros(3)
    for i in range(trials):
        step = race_step(net, s0, RngStream(11, i))
        wins[step.fired[0]] += 1
    for w, r in zip(wins, rates):
        p = r / sum(rates)
        assert abs(w / trials - p) < 3 * math.sqrt(p * (1 - p) / trials)


def test_delay_only_step_then_timelock():
    # the only edge needs x >= 9 but the invariant stops time at 5
    net = net_of(one_clock("A", invariant="x <= 5", edges=[Edge("L0", "L0", guard="x >= 9")]))
    step = race_step(net, initial_state(net.resolve()), RngStream(0))
    assert step.fired is None and step.delay == pytest.approx(5)
    with pytest.raises(Stuck) as stuck:
        race_step(net, step.post_state, RngStream(1))
    assert stuck.value.reason == TIMELOCK


def test_deadlock_when_nothing_bounds_time():
    net = net_of(one_clock(invariant="", edges=[]))
    with pytest.raises(Stuck) as stuck:
        race_step(net, initial_state(net.resolve()), RngStream(0))
    assert stuck.value.reason == DEADLOCK


def test_simulate_records_consistent_run():
    cfg = build_aloha(3)
    net = build_system(cfg, 0.4, 0.3)
    run = simulate(net, AfterSteps(40), RngStream(5, 1))
    assert len(run.steps) == 40
    assert run_is_consistent(net, run)


@pytest.mark.parametrize("builder,pd,pc", [(build_aloha, 0.35, 0.5), (build_csmaca, 0, 20)])
def test_engine_matches_reference(builder, pd, pc):
    cfg = builder(3)
    net = build_system(cfg, pd, pc)
    f = cfg.formula.bind(net)
    model = CompiledModel(net, f)
    for s in range(40):
        a = model.run_traced(7, s)
        b = simulate(net, FormulaStop(f), RngStream(7, s))
        assert a.verdict == b.verdict
        assert a.states == b.states


@settings(max_examples=15)
@given(st.integers(0, 2**32), st.integers(0, 500), st.integers(1, 60))
def test_batch_counts_match_reference(seed, start, count):
    cfg = build_aloha(2)
    net = build_system(cfg, 0.6, 0.6)
    f = cfg.formula.bind(net)
    key = pair_key(1, 0.6, 0.6)
    counts = CompiledModel(net, f).run_batch(seed, key, start, count)
    sat = sum(simulate(net, FormulaStop(f), RngStream(seed, key ^ i)).verdict.satisfied
              for i in range(start, start + count))
    assert counts.sum() == count and counts[0] == sat


class UntilTime(StopCondition):
    def __init__(self, t):
        self.t = t

    def step(self, pre, delay, post):
        return Verdict(SATISFIED, None, "time") if post.elapsed > self.t else None


@pytest.mark.parametrize("name", ["aloha", "csmaca"])
def test_time_progress_on_bundled_models(name):
    # more than 1000 steps inside one time unit must be rarer than 1e-3;
    # zero hits in 4000 runs puts the 95% upper bound at 7.5e-4
    cfg = load_config(Path(nashsmc.__file__).parent / "models" / f"{name}.yaml")
    vals = cfg.strategies.values
    runs = 4000
    zeno = 0
    for j, (pd, pc) in enumerate([(vals[0], vals[-1]), (vals[-1], vals[0])]):
        net = build_system(cfg, pd, pc).resolve()
        for i in range(runs // 2):
            run = simulate(net, UntilTime(1.0), RngStream(77, pair_key(9, j, 0) ^ i),
                           max_steps=1001)
            times = [s.post_state.elapsed for s in run.steps]
            assert all(a <= b for a, b in zip(times, times[1:]))
            zeno += len(run.steps) > 1000
    assert zeno == 0
