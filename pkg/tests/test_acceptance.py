"""Acceptance criteria 1-9, each checked at its stated tolerance.

Every test records one PASS/FAIL line; the lines are printed in the
terminal summary (see conftest.py) and as the test runs with ``-s``.
"""
import math

import numpy as np
import pytest
from scipy.special import erfc

from nashsmc.certify import (EvaluationInput, certify_delta, f_delta, validity_experiment,
                             variance_bound_holds)
from nashsmc.cli import main
from nashsmc.engine import CompiledModel
from nashsmc.estimation import EstimationCache, SyntheticGame, cache_get_or_estimate
from nashsmc.game import StrategySpace, build_system, strategy_key
from nashsmc.model import Automaton, Edge, Location, initial_state
from nashsmc.modelfile import load_config
from nashsmc.orchestrator import run_pipeline
from nashsmc.protocols import aloha, build_aloha, build_csmaca, csmaca
from nashsmc.pwctl import SATISFIED, offline_verdict
from nashsmc.race import race_step, sample_component_delay
from nashsmc.rng import RngStream
from nashsmc.search import exhaustive_candidate, find_candidate

from conftest import ACCEPTANCE, net_of, one_clock

MODELS = __import__("pathlib").Path(aloha.__file__).parent.parent / "models"


def record(k: int, ok: bool, detail: str) -> None:
    line = f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE.append(line)
    print(line)


# -- 1 -------------------------------------------------------------------------


@pytest.mark.parametrize("true_delta", [1.0, 1.1])
def test_criterion_1_validity(true_delta):
    rep = validity_experiment(true_delta, strategies=100, n=100_000, trials=200, seed=2024)
    ok = (rep.insufficient == 0 and rep.exceedance <= 0.05 + 0.03
          and true_delta - 0.05 <= rep.mean <= true_delta)
    record(1, ok, f"true delta {true_delta}: exceedance {rep.exceedance:.3f} (<= 0.08), "
                  f"mean {rep.mean:.4f} in [{true_delta - 0.05:.2f}, {true_delta}]")
    assert ok


# -- 2 -------------------------------------------------------------------------


def grid_root(u: dict, cand, n: int, alpha: float, lo: float, hi: float, points: int):
    """Largest grid point with f <= alpha, using scipy's erfc."""
    grid = np.linspace(lo, hi, points)
    dev = np.array([v for k, v in u.items() if k != cand])
    f = 0.5 * erfc(np.sqrt(n) * (u[cand] - grid[:, None] * dev[None, :])).sum(axis=1)
    return grid[f <= alpha].max()


def test_criterion_2_f_and_bisection():
    ident = []
    for size in (1, 7, 100):
        u = {i: 0.42 for i in range(size)}
        ident.append(abs(f_delta(EvaluationInput(0, u, 10**5, include_self=True), 1.0) - size / 2))
    rng = np.random.default_rng(7)
    worst_res, worst_gap = 0.0, 0.0
    for _ in range(20):
        m = int(rng.integers(5, 100))
        u = {i: float(np.clip(0.5 + rng.normal(0, 0.01), 0, 1)) for i in range(m)}
        u[0] = 0.5 * float(rng.uniform(0.9, 1.2))
        inp = EvaluationInput(0, u, 100_000, 0.05)
        res = certify_delta(inp)
        assert res.f_at_delta <= 0.05
        worst_res = max(worst_res, abs(res.f_at_delta - 0.05))
        # refining scan: spacing 1e-3, then 1e-6, then 1e-9
        root = grid_root(u, 0, 100_000, 0.05, 0.0, 3.0, 3001)
        for half in (1e-3, 1e-6):
            root = grid_root(u, 0, 100_000, 0.05, root - half, root + half, 2001)
        worst_gap = max(worst_gap, abs(root - res.delta))
    ok = max(ident) <= 1e-12 and worst_res <= 1e-6 and worst_gap <= 1e-8
    record(2, ok, f"|f(1) - |P|/2| <= {max(ident):.1e}, max |f(delta) - alpha| = {worst_res:.1e}, "
                  f"max distance to grid root {worst_gap:.1e}")
    assert ok


# -- 3 and 4 -------------------------------------------------------------------


def synthetic_games():
    games = []
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        m = int(rng.integers(3, 21))
        # a mild common trend plus noise, so that pruning has real work to do
        base = rng.uniform(0.3, 0.8, m)
        table = np.clip(base[None, :] + rng.normal(0, 0.08, (m, m)), 0.0, 1.0)
        src = SyntheticGame.from_matrix(StrategySpace("p", tuple(range(m))), table)
        cache = EstimationCache(src.fingerprint(), seed)
        games.append((src, cache, seed))
    return games


def estimator(src, cache):
    return lambda a, b: cache_get_or_estimate(cache, src, a, b, 2000)


def test_criterion_3_search_matches_exhaustive():
    agree = 0
    for src, cache, seed in synthetic_games():
        e = estimator(src, cache)
        a = find_candidate(src.strategies, e, d=0.0, seed=seed)
        b = exhaustive_candidate(src.strategies, e)
        agree += a.strategy == b.strategy
    ok = agree == 50
    record(3, ok, f"find_candidate(d=0) equals exhaustive search on {agree}/50 games")
    assert ok


def test_criterion_4_pruning():
    sound, economical, pruned_total = True, 0, 0
    for src, cache, seed in synthetic_games():
        e = estimator(src, cache)
        res = find_candidate(src.strategies, e, d=0.9, seed=seed)
        for p, (witness, r) in res.pruned.items():
            u_pp = res.estimates[(p, p)].estimate()
            u_wp = res.estimates[(witness, p)].estimate()
            sound &= r < 0.9 and u_pp < 0.9 * u_wp
        pruned_total += len(res.pruned)
        economical += res.pairs_estimated < len(src.strategies) ** 2
    ok = sound and economical >= 45 and pruned_total > 0
    record(4, ok, f"witnesses sound: {sound} ({pruned_total} pruned), fewer than |P|^2 pairs "
                  f"in {economical}/50 games (>= 45)")
    assert ok


# -- 5 -------------------------------------------------------------------------


def exp_racer(name, rate):
    return Automaton(name, (Location("A", exp_rate=rate), Location("B")), "A", clocks=("x",),
                     edges=(Edge("A", "B"),))


def offline(formula, run):
    delays = [s.delay for s in run.steps]
    if run.reason == "deadlock":
        delays.append(math.inf)
    return offline_verdict(formula, run.states, delays)


def test_criterion_5_simulator_statistics():
    trials = 100_000
    details, ok = [], True

    rates = (1.0, 2.0, 5.0)
    net = net_of(*(exp_racer(f"C{i}", r) for i, r in enumerate(rates)))
    s0 = initial_state(net.resolve())
    wins = np.zeros(3)
    for i in range(trials):
        wins[race_step(net, s0, RngStream(31, i)).fired[0]] += 1
    z = max(abs(w / trials - r / sum(rates)) / math.sqrt(r / sum(rates) * (1 - r / sum(rates)) / trials)
            for w, r in zip(wins, rates))
    ok &= z <= 3
    details.append(f"race |z| max {z:.2f}")

    uni = net_of(one_clock(invariant="x <= 5", edges=[Edge("L0", "L1", guard="x >= 1")]))
    ex = net_of(one_clock(invariant="", exp_rate=2.0, edges=[Edge("L0", "L1", guard="x >= 1")]))
    for name, n, mean, var in (("uniform", uni, 3.0, 16 / 12), ("exponential", ex, 1.5, 0.25)):
        s = initial_state(n.resolve())
        rng = RngStream(32, 0)
        xs = np.array([sample_component_delay(n, s, 0, rng) for _ in range(trials)])
        z = abs(xs.mean() - mean) / math.sqrt(var / trials)
        ok &= z <= 3
        details.append(f"{name} mean |z| {z:.2f}")

    runs = 10_000
    for name, pd, pc in (("aloha", 0.35, 0.35), ("csmaca", 0, 20)):
        cfg = load_config(MODELS / f"{name}.yaml")
        net = build_system(cfg, pd, pc)
        f = cfg.formula.bind(net)
        model = CompiledModel(net, f)
        agree = sat = 0
        for i in range(runs):
            run = model.run_traced(33, i)
            off = offline(f, run)
            same = off.outcome == run.verdict.outcome
            if same and off.outcome == SATISFIED:
                same = abs(off.witness_time - run.verdict.witness_time) <= 1e-9
                sat += 1
            agree += same
        ok &= agree == runs
        details.append(f"{name} monitor/offline agree {agree}/{runs} ({sat} satisfied)")
    record(5, ok, ", ".join(details))
    assert ok


# -- 6 -------------------------------------------------------------------------


@pytest.fixture(scope="module")
def aloha_reports():
    return {N: run_pipeline(build_aloha(N), d=0.9, n1=10_000, n2=10_000, alpha=0.05, seed=0)
            for N in (2, 3, 5)}


def test_criterion_6_aloha(aloha_reports):
    r = aloha_reports
    interior = all(rep.found and 0.05 < rep.candidate < 0.95 for rep in r.values())
    two = r[2]
    u2 = two.diagonal.get(strategy_key(two.candidate), 0.0) if two.found else 0.0
    ok = (interior and 0.25 <= two.candidate <= 0.50 and u2 >= 0.9
          and r[5].p_opt < r[2].p_opt)
    rows = "; ".join(
        f"N={N}: NE {rep.candidate} (delta {rep.delta if rep.delta is None else round(rep.delta, 3)}, "
        f"U {rep.u_candidate:.3f}), opt {rep.p_opt} (U {rep.u_opt:.3f})"
        for N, rep in r.items()
    )
    record(6, ok, rows)
    assert ok


# -- 7 -------------------------------------------------------------------------


def test_criterion_7_csmaca():
    plain = run_pipeline(build_csmaca(5), d=0.9, n1=10_000, n2=10_000, seed=0)
    coal = run_pipeline(build_csmaca(4, csmaca.calibrated(coalition_size=2)), d=0.9,
                        n1=10_000, n2=10_000, seed=0)
    ok = plain.found and plain.candidate == 0 and coal.found and coal.candidate > 0
    record(7, ok, f"N=5 no coalitions: NE UnitBackoff={plain.candidate}; two coalitions of 2: "
                  f"NE UnitBackoff={coal.candidate}")
    assert ok


# -- 8 -------------------------------------------------------------------------


def test_criterion_8_determinism(tmp_path):
    outs = []
    for w in (1, 4, 8):
        out = tmp_path / f"report_{w}.json"
        code = main(["analyze", "--model", "aloha", "--nodes", "3", "--grid", "0.1,0.3,0.5,0.7",
                     "--n1", "3000", "--n2", "6000", "--seed", "5", "--workers", str(w),
                     "--out", str(out)])
        assert code == 0
        outs.append(out.read_bytes())
    ok = outs[0] == outs[1] == outs[2]
    record(8, ok, f"analyze reports byte-identical at 1, 4 and 8 workers: {ok}")
    assert ok


# -- 9 -------------------------------------------------------------------------


def test_criterion_9_variance_bound():
    holds, m = variance_bound_holds(1e-3)
    record(9, holds, f"max of q1(1-q1) + q2(1-q2) over the 1e-3 grid is {m:.6f} (<= 0.5)")
    assert holds
