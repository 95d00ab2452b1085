"""Expressions used in guards, updates, weights, invariants and formulas.

The surface syntax is C-like (``&&``, ``||``, ``!``) on top of Python's
expression grammar, which we parse with :mod:`ast` and then whitelist.
Every expression is compiled twice: into a Python closure used by the
reference semantics, and into a flat postfix program consumed by the
compiled simulation engine.
"""
from __future__ import annotations

import ast
import math
import re
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

# Tolerance used for every clock comparison against an integer constant.
CLOCK_EPS = 1e-9

# postfix opcodes
OP_CONST = 0
OP_VAR = 1
OP_LOC = 3
OP_CLOCKCMP = 4
OP_ADD = 10
OP_SUB = 11
OP_MUL = 12
OP_DIV = 13
OP_FLOORDIV = 14
OP_MOD = 15
OP_POW = 16
OP_LT = 17
OP_LE = 18
OP_GT = 19
OP_GE = 20
OP_EQ = 21
OP_NE = 22
OP_AND = 23
OP_OR = 24
OP_NEG = 30
OP_NOT = 31

# comparison kinds for clock bounds
CMP_LT, CMP_LE, CMP_GT, CMP_GE = 0, 1, 2, 3
CMP_SYMBOL = {CMP_LT: "<", CMP_LE: "<=", CMP_GT: ">", CMP_GE: ">="}
SYMBOL_CMP = {v: k for k, v in CMP_SYMBOL.items()}
_FLIP = {CMP_LT: CMP_GT, CMP_LE: CMP_GE, CMP_GT: CMP_LT, CMP_GE: CMP_LE}

_BINOPS = {
    ast.Add: (OP_ADD, "+"),
    ast.Sub: (OP_SUB, "-"),
    ast.Mult: (OP_MUL, "*"),
    ast.Div: (OP_DIV, "/"),
    ast.FloorDiv: (OP_FLOORDIV, "//"),
    ast.Mod: (OP_MOD, "%"),
    ast.Pow: (OP_POW, "**"),
}
_CMPOPS = {
    ast.Lt: (OP_LT, "<"),
    ast.LtE: (OP_LE, "<="),
    ast.Gt: (OP_GT, ">"),
    ast.GtE: (OP_GE, ">="),
    ast.Eq: (OP_EQ, "=="),
    ast.NotEq: (OP_NE, "!="),
}
_AST_CMP = {ast.Lt: CMP_LT, ast.LtE: CMP_LE, ast.Gt: CMP_GT, ast.GtE: CMP_GE}


class ExpressionError(ValueError):
    """Raised for syntax errors and unresolvable names."""


@dataclass(frozen=True)
class Ref:
    """What a name resolves to inside a scope."""

    kind: str  # "var", "clock", "const", "loc"
    index: int = -1
    value: float = 0.0
    comp: int = -1


Scope = Callable[[str], "Ref | None"]


def _translate(text: str) -> str:
    text = text.replace("&&", " and ").replace("||", " or ")
    text = re.sub(r"!(?!=)", " not ", text)
    text = re.sub(r"\btrue\b", "True", text)
    text = re.sub(r"\bfalse\b", "False", text)
    return text


def parse(text: str) -> ast.expr:
    """Parse ``text`` into a whitelisted Python AST expression."""
    try:
        tree = ast.parse(_translate(text).strip(), mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse expression {text!r}: {exc.msg}") from None
    _check_nodes(tree.body, text)
    return tree.body


def _check_nodes(node: ast.AST, text: str) -> None:
    allowed = (
        ast.BinOp, ast.UnaryOp, ast.BoolOp, ast.Compare, ast.Name, ast.Constant,
        ast.Attribute, ast.Load, ast.And, ast.Or, ast.Not, ast.USub, ast.UAdd,
        *_BINOPS, *_CMPOPS,
    )
    for sub in ast.walk(node):
        if not isinstance(sub, allowed):
            raise ExpressionError(f"unsupported construct {type(sub).__name__} in {text!r}")
        if isinstance(sub, ast.Constant) and not isinstance(sub.value, (int, float, bool)):
            raise ExpressionError(f"unsupported constant {sub.value!r} in {text!r}")


def dotted_name(node: ast.AST) -> str | None:
    if isinstance(node, ast.Name):
        return node.id
    if isinstance(node, ast.Attribute):
        base = dotted_name(node.value)
        return None if base is None else f"{base}.{node.attr}"
    return None


def split_conjuncts(node: ast.expr) -> list[ast.expr]:
    if isinstance(node, ast.BoolOp) and isinstance(node.op, ast.And):
        out: list[ast.expr] = []
        for v in node.values:
            out.extend(split_conjuncts(v))
        return out
    if isinstance(node, ast.Constant) and node.value is True:
        return []
    return [node]


def fold_constant(node: ast.expr, scope: Scope) -> float | None:
    """Evaluate ``node`` if it only involves constants and parameters."""
    try:
        expr = compile_expr(node, scope, allow_clocks=False)
    except ExpressionError:
        return None
    return expr.const


def as_clock_bound(node: ast.expr, scope: Scope) -> tuple[int, int, float] | None:
    """Recognize ``clock ~ const`` (either orientation); returns (clock, cmp, bound)."""
    if not (isinstance(node, ast.Compare) and len(node.ops) == 1):
        return None
    op = type(node.ops[0])
    if op not in _AST_CMP:
        return None
    left, right = node.left, node.comparators[0]
    for clock_side, const_side, flip in ((left, right, False), (right, left, True)):
        name = dotted_name(clock_side)
        if name is None:
            continue
        ref = scope(name)
        if ref is None or ref.kind != "clock":
            continue
        bound = fold_constant(const_side, scope)
        if bound is None:
            raise ExpressionError(f"clock {name} must be compared to a constant")
        cmp = _AST_CMP[op]
        return ref.index, (_FLIP[cmp] if flip else cmp), bound
    return None


@dataclass(frozen=True)
class Expr:
    """A compiled expression: postfix program plus Python closure."""

    text: str
    code: tuple[tuple[int, int, int, float], ...]
    fn: Callable
    const: float | None = None
    uses_clocks: bool = False

    def __call__(self, v, c=(), l=()):
        return self.fn(v, c, l)


def compile_expr(
    node: ast.expr | str,
    scope: Scope,
    allow_clocks: bool = False,
) -> Expr:
    """Compile ``node`` against ``scope``.

    Clock references are only legal as ``clock ~ const`` atoms and only
    when ``allow_clocks`` is set (state predicates).
    """
    if isinstance(node, str):
        text = node
        node = parse(node)
    else:
        text = ast.unparse(node)
    code: list[tuple[int, int, int, float]] = []
    uses = {"var": False, "clock": False, "loc": False}

    def emit(n: ast.expr) -> str:
        if allow_clocks:
            cb = as_clock_bound(n, scope)
            if cb is not None:
                clock, cmp, bound = cb
                uses["clock"] = True
                code.append((OP_CLOCKCMP, clock, cmp, float(bound)))
                if cmp in (CMP_LT, CMP_LE):
                    return f"(c[{clock}] <= {bound!r} + {CLOCK_EPS!r})"
                return f"(c[{clock}] >= {bound!r} - {CLOCK_EPS!r})"
        if isinstance(n, ast.Constant):
            code.append((OP_CONST, 0, 0, float(n.value)))
            return repr(float(n.value)) if isinstance(n.value, float) else repr(int(n.value))
        name = dotted_name(n)
        if name is not None:
            ref = scope(name)
            if ref is None:
                raise ExpressionError(f"unknown name {name!r} in {text!r}")
            if ref.kind == "const":
                code.append((OP_CONST, 0, 0, float(ref.value)))
                return repr(ref.value)
            if ref.kind == "var":
                uses["var"] = True
                code.append((OP_VAR, ref.index, 0, 0.0))
                return f"v[{ref.index}]"
            if ref.kind == "loc":
                uses["loc"] = True
                code.append((OP_LOC, ref.comp, ref.index, 0.0))
                return f"(l[{ref.comp}] == {ref.index})"
            raise ExpressionError(
                f"clock {name!r} may only appear as 'clock ~ constant' in {text!r}"
            )
        if isinstance(n, ast.BinOp):
            op, sym = _BINOPS[type(n.op)]
            a, b = emit(n.left), emit(n.right)
            code.append((op, 0, 0, 0.0))
            return f"({a} {sym} {b})"
        if isinstance(n, ast.UnaryOp):
            a = emit(n.operand)
            if isinstance(n.op, ast.UAdd):
                return a
            if isinstance(n.op, ast.USub):
                code.append((OP_NEG, 0, 0, 0.0))
                return f"(-{a})"
            code.append((OP_NOT, 0, 0, 0.0))
            return f"(not {a})"
        if isinstance(n, ast.BoolOp):
            op = OP_AND if isinstance(n.op, ast.And) else OP_OR
            parts = [emit(n.values[0])]
            for v in n.values[1:]:
                parts.append(emit(v))
                code.append((op, 0, 0, 0.0))
            joiner = " and " if op == OP_AND else " or "
            return "(" + joiner.join(f"bool({p})" for p in parts) + ")"
        if isinstance(n, ast.Compare):
            # chained comparisons a < b < c become (a < b) and (b < c)
            left = n.left
            pieces = []
            for i, (cop, right) in enumerate(zip(n.ops, n.comparators)):
                opc, sym = _CMPOPS[type(cop)]
                a, b = emit(left), emit(right)
                code.append((opc, 0, 0, 0.0))
                pieces.append(f"({a} {sym} {b})")
                if i:
                    code.append((OP_AND, 0, 0, 0.0))
                left = right
            return "(" + " and ".join(pieces) + ")"
        raise ExpressionError(f"unsupported expression in {text!r}")

    src = emit(node)
    fn = eval(f"lambda v, c, l: {src}", {"__builtins__": {"bool": bool}})  # noqa: S307
    const = None
    if not any(uses.values()):
        try:
            const = float(fn((), (), ()))
        except ArithmeticError as exc:
            raise ExpressionError(f"cannot evaluate {text!r}: {exc}") from None
    return Expr(text=text, code=tuple(code), fn=fn, const=const, uses_clocks=uses["clock"])


def parse_updates(text: str) -> list[tuple[str, ast.expr]]:
    """Parse ``a = e1, b := e2`` into (name, expression) pairs, in order."""
    out = []
    for part in _split_top_level(text, ","):
        part = part.strip()
        if not part:
            continue
        m = re.match(r"^([A-Za-z_][\w.]*)\s*(:=|=)(?!=)\s*(.+)$", part, re.S)
        if not m:
            raise ExpressionError(f"malformed update {part!r}")
        out.append((m.group(1), parse(m.group(3))))
    return out


def _split_top_level(text: str, sep: str) -> list[str]:
    depth, cur, out = 0, [], []
    for ch in text:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        if ch == sep and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return out


def const_scope(params: Mapping[str, float]) -> Scope:
    def lookup(name: str) -> Ref | None:
        if name in params:
            return Ref("const", value=params[name])
        return None

    return lookup


def eval_const(text: str | float | int, params: Mapping[str, float]) -> float:
    """Evaluate a parameter-only expression (weights, bounds, rates)."""
    if isinstance(text, (int, float)) and not isinstance(text, bool):
        return float(text)
    expr = compile_expr(str(text), const_scope(params))
    if expr.const is None:  # pragma: no cover - compile_expr raises first
        raise ExpressionError(f"{text!r} is not constant")
    if not math.isfinite(expr.const):
        raise ExpressionError(f"{text!r} is not finite")
    return expr.const


def pack_programs(programs: list[tuple[tuple[int, int, int, float], ...]]):
    """Concatenate postfix programs into flat arrays with start offsets."""
    starts = np.zeros(len(programs) + 1, dtype=np.int64)
    flat: list[tuple[int, int, int, float]] = []
    for i, prog in enumerate(programs):
        flat.extend(prog)
        starts[i + 1] = len(flat)
    op = np.array([p[0] for p in flat], dtype=np.int64)
    ia = np.array([p[1] for p in flat], dtype=np.int64)
    ib = np.array([p[2] for p in flat], dtype=np.int64)
    fa = np.array([p[3] for p in flat], dtype=np.float64)
    return starts, op, ia, ib, fa
