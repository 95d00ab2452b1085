"""Games built from a parameterized node automaton.

A :class:`GameConfig` describes ``N`` copies of one node template plus an
optional medium. Player 0 (with its whole coalition) plays the deviant
strategy and everybody else the common one; :func:`build_system` turns such
a profile into a concrete :class:`~nashsmc.model.Network`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from fractions import Fraction
from typing import Sequence

from .expr import eval_const
from .model import Automaton, Network, VariableDecl
from .pwctl import PwctlFormula
from .race import DEFAULT_MAX_STEPS


class StrategyError(ValueError):
    """A strategy value is not part of the game's strategy space."""


@dataclass(frozen=True)
class StrategySpace:
    label: str
    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise StrategyError("strategy space is empty")
        if len(set(self.values)) != len(self.values):
            raise StrategyError("strategy space has duplicate values")

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __contains__(self, value) -> bool:
        return value in self.values

    def index(self, value) -> int:
        return self.values.index(value)

    @classmethod
    def grid(cls, label: str, start: float, stop: float, count: int) -> "StrategySpace":
        """``count`` evenly spaced values from ``start`` to ``stop`` inclusive,
        rounded to 10 decimals so they print and hash stably."""
        if count == 1:
            return cls(label, (float(start),))
        step = (Fraction(str(stop)) - Fraction(str(start))) / (count - 1)
        vals = tuple(round(float(Fraction(str(start)) + i * step), 10) for i in range(count))
        return cls(label, vals)


@dataclass(frozen=True)
class GameConfig:
    """Symmetric game over a parameterized node template."""

    name: str
    node: Automaton
    players: int
    strategies: StrategySpace
    goal: str
    shared_vars: tuple[VariableDecl, ...] = ()
    channels: tuple[str, ...] = ()
    medium: tuple[Automaton, ...] = ()
    coalition_size: int = 1
    max_steps: int = DEFAULT_MAX_STEPS
    description: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.players < 2:
            raise ValueError(f"a game needs at least 2 players, got {self.players}")
        if not 1 <= self.coalition_size < self.players:
            raise ValueError(
                f"coalition size must be in [1, {self.players - 1}], got {self.coalition_size}"
            )
        PwctlFormula.parse(self.goal)

    @property
    def formula(self) -> PwctlFormula:
        return PwctlFormula.parse(self.goal)

    def component_name(self, i: int) -> str:
        return f"{self.node.name}{i}"

    def deviants(self) -> range:
        """Players bound to the deviant strategy (player 0's coalition)."""
        return range(self.coalition_size)

    def with_(self, **changes) -> "GameConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        from .modelfile import config_to_dict

        return config_to_dict(self)

    def fingerprint(self) -> str:
        """Content hash of the game (model, strategies, goal, coalition)."""
        d = self.to_dict()
        d.pop("description", None)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _resolve_decl(decl: VariableDecl, env: dict) -> VariableDecl:
    return VariableDecl(
        decl.name,
        int(eval_const(decl.init, env)),
        int(eval_const(decl.lo, env)),
        int(eval_const(decl.hi, env)),
    )


def build_system(config: GameConfig, p_deviant, p_common) -> Network:
    """The network ``M(p') || M(p) || ... || M(p) || medium``."""
    for p in (p_deviant, p_common):
        if p not in config.strategies:
            raise StrategyError(
                f"{p!r} is not in the strategy space of {config.strategies.label}"
            )
    n = config.players
    comps = []
    deviants = set(config.deviants())
    for i in range(n):
        value = p_deviant if i in deviants else p_common
        params = {**config.node.params, "N": n, "ID": i, config.strategies.label: value}
        node = config.node
        comps.append(
            replace(
                node,
                name=config.component_name(i),
                params=params,
                variables=tuple(_resolve_decl(v, params) for v in node.variables),
            )
        )
    env = {**config.node.params, "N": n}
    for m in config.medium:
        comps.append(replace(m, params={**env, **m.params}))
    shared = tuple(_resolve_decl(v, env) for v in config.shared_vars)
    return Network(tuple(comps), shared, tuple(config.channels))


def strategy_key(value) -> str:
    """Canonical text of a strategy value (used in cache keys and CSVs)."""
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return repr(value)


def as_dict(obj) -> dict:
    return asdict(obj)


def coalition_members(config: GameConfig) -> Sequence[int]:
    return list(config.deviants())
