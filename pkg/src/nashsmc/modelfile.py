"""YAML model files.

A model file describes a whole game: the node template, optional medium
automata, shared variables, channels, the strategy space, the goal and the
coalition size. Fields left at their defaults may be omitted. Example::

    format_version: 1
    name: toy
    players: 2
    strategies: {label: P, values: [0.5, 1.0]}
    goal: "F[Node0.t<=10](Node0.DONE)"
    node:
      name: Node
      initial: A
      clocks: [x, t]
      params: {P: 0.5}
      locations:
        - {name: A, invariant: "x <= 1"}
        - {name: DONE}
      edges:
        - {source: A, target: DONE, guard: "x >= 1", weight: P}

``load_config(dump_config(c)) == c`` for every :class:`GameConfig`.
"""
from __future__ import annotations

from dataclasses import MISSING, fields
from pathlib import Path
from typing import Any

import yaml

from .game import GameConfig, StrategySpace
from .model import INT_MAX, INT_MIN, Automaton, Edge, Location, VariableDecl

FORMAT_VERSION = 1


class ModelFileError(ValueError):
    """A model file is malformed."""


def _strip_defaults(obj, keep=("name",)) -> dict:
    out = {}
    for f in fields(obj):
        value = getattr(obj, f.name)
        if f.name not in keep:
            if f.default is not MISSING and value == f.default:
                continue
            if f.default_factory is not MISSING and value == f.default_factory():
                continue
        out[f.name] = value
    return out


def _var_to_dict(v: VariableDecl) -> dict:
    d = {"name": v.name, "init": v.init}
    if v.lo != INT_MIN:
        d["lo"] = v.lo
    if v.hi != INT_MAX:
        d["hi"] = v.hi
    return d


def _location_to_dict(loc: Location) -> dict:
    d = _strip_defaults(loc)
    if "rates" in d:
        d["rates"] = dict(d["rates"])
    return d


def _edge_to_dict(e: Edge) -> dict:
    d = _strip_defaults(e, keep=("source", "target"))
    if "resets" in d:
        d["resets"] = list(d["resets"])
    return d


def automaton_to_dict(a: Automaton) -> dict:
    d: dict[str, Any] = {"name": a.name, "initial": a.initial}
    if a.clocks:
        d["clocks"] = list(a.clocks)
    if a.params:
        d["params"] = dict(a.params)
    if a.variables:
        d["variables"] = [_var_to_dict(v) for v in a.variables]
    d["locations"] = [_location_to_dict(loc) for loc in a.locations]
    d["edges"] = [_edge_to_dict(e) for e in a.edges]
    return d


def config_to_dict(config: GameConfig) -> dict:
    d: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "name": config.name,
        "players": config.players,
        "coalition_size": config.coalition_size,
        "max_steps": config.max_steps,
        "strategies": {
            "label": config.strategies.label,
            "values": list(config.strategies.values),
        },
        "goal": config.goal,
    }
    if config.shared_vars:
        d["shared_vars"] = [_var_to_dict(v) for v in config.shared_vars]
    if config.channels:
        d["channels"] = list(config.channels)
    d["node"] = automaton_to_dict(config.node)
    if config.medium:
        d["medium"] = [automaton_to_dict(m) for m in config.medium]
    if config.description:
        d["description"] = dict(config.description)
    return d


# -- loading -----------------------------------------------------------------


def _check_keys(d, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(d, dict):
        raise ModelFileError(f"{where}: expected a mapping, got {type(d).__name__}")
    unknown = set(d) - allowed
    if unknown:
        raise ModelFileError(f"{where}: unknown keys {sorted(unknown)}")
    missing = required - set(d)
    if missing:
        raise ModelFileError(f"{where}: missing keys {sorted(missing)}")


def _var_from_dict(d, where: str) -> VariableDecl:
    _check_keys(d, {"name", "init", "lo", "hi"}, {"name"}, where)
    return VariableDecl(d["name"], d.get("init", 0), d.get("lo", INT_MIN), d.get("hi", INT_MAX))


def _location_from_dict(d, where: str) -> Location:
    _check_keys(d, {f.name for f in fields(Location)}, {"name"}, where)
    d = dict(d)
    if "rates" in d:
        d["rates"] = dict(d["rates"])
    return Location(**d)


def _edge_from_dict(d, where: str) -> Edge:
    _check_keys(d, {f.name for f in fields(Edge)}, {"source", "target"}, where)
    d = dict(d)
    if "resets" in d:
        d["resets"] = tuple(d["resets"])
    return Edge(**d)


def automaton_from_dict(d, where: str = "automaton") -> Automaton:
    _check_keys(
        d, {"name", "initial", "clocks", "params", "variables", "locations", "edges"},
        {"name", "initial", "locations"}, where,
    )
    name = d["name"]
    return Automaton(
        name=name,
        locations=tuple(
            _location_from_dict(x, f"{name}.locations[{i}]") for i, x in enumerate(d["locations"])
        ),
        initial=d["initial"],
        clocks=tuple(d.get("clocks", ())),
        variables=tuple(
            _var_from_dict(x, f"{name}.variables[{i}]") for i, x in enumerate(d.get("variables", ()))
        ),
        edges=tuple(
            _edge_from_dict(x, f"{name}.edges[{i}]") for i, x in enumerate(d.get("edges", ()))
        ),
        params=dict(d.get("params", {})),
    )


def config_from_dict(d) -> GameConfig:
    _check_keys(
        d,
        {"format_version", "name", "players", "coalition_size", "max_steps", "strategies",
         "goal", "shared_vars", "channels", "node", "medium", "description"},
        {"format_version", "name", "players", "strategies", "goal", "node"},
        "model file",
    )
    if d["format_version"] != FORMAT_VERSION:
        raise ModelFileError(
            f"unsupported format_version {d['format_version']!r} (expected {FORMAT_VERSION})"
        )
    s = d["strategies"]
    _check_keys(s, {"label", "values"}, {"label", "values"}, "strategies")
    extra = {}
    if "max_steps" in d:
        extra["max_steps"] = int(d["max_steps"])
    try:
        return GameConfig(
            name=d["name"],
            node=automaton_from_dict(d["node"], "node"),
            players=int(d["players"]),
            strategies=StrategySpace(s["label"], tuple(s["values"])),
            goal=d["goal"],
            shared_vars=tuple(
                _var_from_dict(x, f"shared_vars[{i}]") for i, x in enumerate(d.get("shared_vars", ()))
            ),
            channels=tuple(d.get("channels", ())),
            medium=tuple(
                automaton_from_dict(x, f"medium[{i}]") for i, x in enumerate(d.get("medium", ()))
            ),
            coalition_size=int(d.get("coalition_size", 1)),
            description=dict(d.get("description", {})),
            **extra,
        )
    except ModelFileError:
        raise
    except (TypeError, ValueError) as exc:
        raise ModelFileError(str(exc)) from exc


def dumps(config: GameConfig) -> str:
    return yaml.safe_dump(config_to_dict(config), sort_keys=False, width=100)


def loads(text: str) -> GameConfig:
    try:
        d = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelFileError(f"not valid YAML: {exc}") from exc
    return config_from_dict(d)


def dump_config(config: GameConfig, path) -> None:
    Path(path).write_text(dumps(config))


def load_config(path) -> GameConfig:
    return loads(Path(path).read_text())
