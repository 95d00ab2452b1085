"""Command line interface: ``nashsmc <command> [options]``.

Exit status is 0 on success, 1 on errors, 2 when the search pruned every
strategy and 3 when ``n`` is too small to certify anything.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .certify import EvaluationInput, InsufficientSimulations, certify_delta, validity_experiment
from .estimation import EstimationCache, StaleCacheError, as_source, pair_key
from .game import GameConfig, StrategySpace, build_system, strategy_key
from .model import ModelError, validate
from .modelfile import ModelFileError, load_config
from .orchestrator import (DEFAULT_ALPHA, DEFAULT_D, DEFAULT_N1, DEFAULT_N2, PoolEstimator,
                           Scheduler, export, report_csv, report_text, run_pipeline)
from .protocols import aloha, csmaca
from .search import NoCandidate, find_candidate

EXIT_OK, EXIT_ERROR, EXIT_NO_CANDIDATE, EXIT_INSUFFICIENT = 0, 1, 2, 3

log = logging.getLogger("nashsmc")


class UsageError(ValueError):
    pass


def _parse_values(text: str, integer: bool) -> tuple:
    conv = int if integer else float
    try:
        return tuple(conv(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise UsageError(f"bad --grid value list {text!r}") from exc


def load_model(args) -> GameConfig:
    """Build the game selected by ``--model``, ``--nodes``, ``--grid`` and ``--coalition``."""
    name = args.model
    grid = args.grid
    if name == "aloha":
        nodes = args.nodes or 5
        if args.coalition not in (None, 1):
            raise UsageError("the Aloha model has no coalitions")
        space = None
        if grid:
            space = (aloha.default_grid(int(grid)) if "," not in grid
                     else StrategySpace(aloha.LABEL, _parse_values(grid, False)))
        return aloha.build_aloha(nodes, strategies=space)
    if name == "csmaca":
        nodes = args.nodes or 5
        params = csmaca.calibrated(args.coalition or 1)
        space = None
        if grid:
            space = (csmaca.default_grid(step=int(grid)) if "," not in grid
                     else StrategySpace(csmaca.LABEL, _parse_values(grid, True)))
        return csmaca.build_csmaca(nodes, params, space)
    path = Path(name)
    if not path.exists():
        raise UsageError(f"--model must be aloha, csmaca or an existing model file, got {name!r}")
    cfg = load_config(path)
    changes = {}
    if args.nodes:
        changes["players"] = args.nodes
    if args.coalition:
        changes["coalition_size"] = args.coalition
    if grid:
        if "," not in grid:
            raise UsageError("for a model file, --grid takes a comma-separated value list")
        integer = all(isinstance(v, int) for v in cfg.strategies)
        changes["strategies"] = StrategySpace(cfg.strategies.label, _parse_values(grid, integer))
    return cfg.with_(**changes) if changes else cfg


def _strategy(cfg: GameConfig, text: str):
    for v in cfg.strategies:
        if strategy_key(v) == text or str(v) == text:
            return v
    try:
        x = float(text)
    except ValueError:
        x = None
    for v in cfg.strategies:
        if x is not None and float(v) == x:
            return v
    raise UsageError(
        f"{text!r} is not in the strategy space "
        f"({', '.join(strategy_key(v) for v in cfg.strategies)})"
    )


def _write(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _fmt(args) -> str:
    if args.format:
        return args.format
    return "csv" if args.out and str(args.out).endswith(".csv") else "json"


# -- commands -----------------------------------------------------------------


def cmd_validate(args) -> int:
    cfg = load_model(args)
    bad = 0
    values = list(cfg.strategies)
    for p in values:
        for q in (values if args.all_pairs else [p]):
            diags = validate(build_system(cfg, q, p))
            for d in diags:
                print(f"[{strategy_key(q)} vs {strategy_key(p)}] {d}")
            bad += len(diags)
    if bad:
        print(f"{bad} problems found")
        return EXIT_ERROR
    print(f"{cfg.name}: {cfg.players} players, {len(values)} strategies, no problems")
    return EXIT_OK


def cmd_simulate(args) -> int:
    from .engine import CompiledModel

    cfg = load_model(args)
    p = _strategy(cfg, args.common)
    q = _strategy(cfg, args.deviant) if args.deviant else p
    net = build_system(cfg, q, p).resolve()
    model = CompiledModel(net, cfg.formula.bind(net), cfg.max_steps)
    stream = pair_key(args.phase, q, p) ^ args.run
    run = model.run_traced(args.seed, stream)
    if args.trace:
        t = 0.0
        for step in run.steps:
            t += step.delay
            if step.fired is None:
                what = "delay only"
            else:
                comp, edge = step.fired
                what = net.edge_label(edge)
                if step.receivers:
                    what += " -> " + ", ".join(net.edge_label(e) for e in step.receivers.values())
            locs = " ".join(net.locations[i].name for i in step.post_state.locations)
            print(f"{t:12.4f}  {what:40s}  [{locs}]")
    v = run.verdict
    print(f"verdict: {v.outcome}" + (f" at {v.witness_time:g}" if v.witness_time is not None else "")
          + (f" ({v.reason})" if v.reason else "") + f", {len(run.steps)} steps")
    return EXIT_OK


def _cache(args, source, seed) -> EstimationCache:
    return EstimationCache(source.fingerprint(), seed, args.cache)


def cmd_estimate(args) -> int:
    cfg = load_model(args)
    src = as_source(cfg)
    p = _strategy(cfg, args.common)
    q = _strategy(cfg, args.deviant)
    with Scheduler(src, args.workers) as sched:
        est = PoolEstimator(sched, _cache(args, src, args.seed)).one(q, p, args.n1, args.phase)
    out = {**est.to_json(), "utility": est.estimate(), "stderr": est.stderr()}
    _write(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_search(args) -> int:
    cfg = load_model(args)
    src = as_source(cfg)
    values = list(cfg.strategies)
    with Scheduler(src, args.workers) as sched:
        est = PoolEstimator(sched, _cache(args, src, args.seed))
        res = find_candidate(
            values, lambda a, b: est.one(a, b, args.n1), d=args.d, seed=args.seed,
            estimate_many=lambda pairs: est.many(pairs, args.n1),
        )
    if isinstance(res, NoCandidate):
        print(f"no candidate: every strategy was pruned at d={args.d:g}; "
              f"retry with --d {res.retry_threshold:g}")
        return EXIT_NO_CANDIDATE
    out = {
        "candidate": res.strategy,
        "worst_ratio": res.worst_ratio,
        "worst_deviation": res.worst_deviation,
        "candidates": list(res.candidates),
        "pruned": [p for p in values if p in res.pruned],
        "pairs_estimated": res.pairs_estimated,
    }
    _write(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = load_model(args)
    src = as_source(cfg)
    p = _strategy(cfg, args.candidate)
    values = list(cfg.strategies)
    with Scheduler(src, args.workers) as sched:
        fresh = PoolEstimator(sched, _cache(args, src, args.seed)).many(
            [(q, p) for q in values], args.n2, phase=2
        )
    inp = EvaluationInput.from_estimates(p, fresh, args.alpha, args.include_self)
    try:
        res = certify_delta(inp)
    except InsufficientSimulations as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    out = {"candidate": p, "delta": res.delta, "delta_upper": res.delta_upper,
           "f_at_delta": res.f_at_delta, "alpha": args.alpha, "n": args.n2,
           "u_candidate": inp.u_candidate, "capped": res.capped}
    _write(json.dumps(out, indent=2) + "\n", args.out)
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = load_model(args)
    report = run_pipeline(
        cfg, d=args.d, n1=args.n1, n2=args.n2, alpha=args.alpha, seed=args.seed,
        workers=args.workers, cache=args.cache, include_self=args.include_self,
    )
    fmt = _fmt(args)
    text = (report_csv(report, args.wall_time) if fmt == "csv"
            else report_text(report, args.wall_time))
    _write(text, args.out)
    print(report.summary(), file=sys.stderr if not args.out else sys.stdout)
    if report.status == "no-candidate":
        return EXIT_NO_CANDIDATE
    if report.status == "insufficient":
        print(f"error: {report.message}", file=sys.stderr)
        return EXIT_INSUFFICIENT
    return EXIT_OK


def cmd_validity(args) -> int:
    rep = validity_experiment(args.delta, args.strategies, args.n, args.trials, args.seed,
                              args.alpha, include_self=args.include_self)
    print(f"true delta {args.delta:g}: {rep.deltas.size} certified, {rep.insufficient} with n too "
          f"small, exceedance {rep.exceedance:.3f}, mean {rep.mean:.4f}")
    if args.out:
        export(rep.deltas, args.out, _fmt(args))
    return EXIT_OK


def cmd_export_surface(args) -> int:
    if not args.cache:
        raise UsageError("export-surface needs --cache")
    cfg = load_model(args)
    src = as_source(cfg)
    if not Path(args.cache).exists():
        raise UsageError(f"no cache file at {args.cache}")
    cache = _cache(args, src, args.seed)
    if args.out:
        export(cache, args.out, _fmt(args), values=list(cfg.strategies))
    else:
        from .orchestrator import surface_csv, surface_text

        text = (surface_csv(cache, list(cfg.strategies)) if _fmt(args) == "csv"
                else surface_text(cache, list(cfg.strategies)))
        sys.stdout.write(text)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _model_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default="aloha", help="aloha, csmaca or a YAML model file")
    p.add_argument("--nodes", type=int, help="number of players (default 5)")
    p.add_argument("--grid", help="number of points (aloha), step (csmaca) or a value list")
    p.add_argument("--coalition", type=int, help="size of player 0's coalition")
    p.add_argument("--seed", type=int, default=0)


def _run_args(p: argparse.ArgumentParser, n1=False, n2=False) -> None:
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--cache", help="estimation cache file (JSON lines)")
    p.add_argument("--out", help="output file (default: standard output)")
    p.add_argument("--format", choices=("csv", "json"), help="output format")
    if n1:
        p.add_argument("--n1", type=int, default=DEFAULT_N1, help="runs per pair in the search")
    if n2:
        p.add_argument("--n2", type=int, default=DEFAULT_N2, help="runs per pair when certifying")


def _cert_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA)
    p.add_argument("--include-self", action="store_true",
                   help="also sum the candidate's own term when certifying")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nashsmc", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check the model for every strategy")
    _model_args(p)
    p.add_argument("--all-pairs", action="store_true", help="check every (p', p) network")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="run one simulation")
    _model_args(p)
    p.add_argument("--common", required=True)
    p.add_argument("--deviant")
    p.add_argument("--run", type=int, default=0, help="run index within the pair")
    p.add_argument("--phase", type=int, default=1)
    p.add_argument("--trace", action="store_true", help="print every step")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate U(p', p)")
    _model_args(p)
    _run_args(p, n1=True)
    p.add_argument("--deviant", required=True)
    p.add_argument("--common", required=True)
    p.add_argument("--phase", type=int, default=1)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("search", help="phase 1: find an equilibrium candidate")
    _model_args(p)
    _run_args(p, n1=True)
    p.add_argument("--d", type=float, default=DEFAULT_D, help="pruning threshold")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("evaluate", help="phase 2: certify a candidate")
    _model_args(p)
    _run_args(p, n2=True)
    _cert_args(p)
    p.add_argument("--candidate", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("analyze", help="search, certify and report")
    _model_args(p)
    _run_args(p, n1=True, n2=True)
    _cert_args(p)
    p.add_argument("--d", type=float, default=DEFAULT_D, help="pruning threshold")
    p.add_argument("--wall-time", action="store_true", help="include wall time in the report")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validity", help="certification on synthetic games with known delta")
    p.add_argument("--delta", type=float, default=1.0, help="true delta")
    p.add_argument("--strategies", type=int, default=100)
    p.add_argument("--n", type=int, default=DEFAULT_N2)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="histogram of the certified deltas")
    p.add_argument("--format", choices=("csv", "json"))
    _cert_args(p)
    p.set_defaults(func=cmd_validity)

    p = sub.add_parser("export-surface", help="write the cached utility estimates")
    _model_args(p)
    _run_args(p)
    p.set_defaults(func=cmd_export_surface)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_ERROR
    try:
        return args.func(args)
    except (UsageError, ModelFileError, ModelError, StaleCacheError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
