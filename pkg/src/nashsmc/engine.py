"""Compiled simulation engine.

The network and the goal formula are flattened into numpy arrays and a
numba kernel runs whole batches of simulations. The kernel reproduces
:mod:`nashsmc.race` and the online monitor of :mod:`nashsmc.pwctl` draw for
draw, so a run can be recorded here and replayed through the reference
semantics. Simulation ``i`` of a batch uses stream ``key ^ i``.
"""
from __future__ import annotations

import math
from collections import namedtuple

import numba as nb
import numpy as np

from . import expr as X
from .model import EMIT, RECEIVE, Network, ResolvedNetwork, initial_state
from .pwctl import SATISFIED, VIOLATED, BoundFormula, Verdict
from .race import DEFAULT_MAX_STEPS, Run, RunStep
from .semantics import RangeError, SemanticError, apply_delay, fire

EPS = X.CLOCK_EPS
INF = np.inf

# outcome / reason / error codes returned by the kernel
OUT_VIOLATED, OUT_SATISFIED = 0, 1
R_NONE, R_STEP_CAP, R_DEADLOCK, R_TIMELOCK, R_DEAD = 0, 1, 2, 3, 4
REASONS = {R_NONE: "", R_STEP_CAP: "step_cap", R_DEADLOCK: "deadlock", R_TIMELOCK: "timelock", R_DEAD: ""}
E_NONE, E_RANGE, E_TARGET_INV, E_STATE_INV, E_NONINT = 0, 1, 2, 3, 4

_INT_FIELDS = (
    "init_loc var_init var_lo var_hi clock_owner loc_urgent loc_inv_start inv_clock "
    "loc_out_start out_edge e_comp e_dst e_chan e_dir e_cg_start cg_clock cg_lower "
    "e_vg_start vg_prog e_rs_start rs_clock e_up_start up_var up_prog prog_start op ia ib "
    "atom_clock cap_clock"
).split()
_FLOAT_FIELDS = "obs_bound loc_exp_rate inv_bound loc_rates e_weight cg_bound fa atom_bound cap_bound".split()

_SCALARS = "n_comp n_clock n_var n_edge n_atom n_cap obs pred_prog max_stack".split()
_SLOTS = _SCALARS + ["o_" + f for f in _INT_FIELDS + _FLOAT_FIELDS[1:]] + ["o_obs_bound"]

# All tables live in one int64 array ``I`` and one float64 array ``F``. The
# small int64 array ``O`` holds sizes and the offsets of each table, indexed
# by the slot constants below. Passing three arrays (instead of dozens) keeps
# the per-call cost of the kernel helpers low.
Tables = namedtuple("Tables", "I F O")

N_COMP = 0
N_CLOCK = 1
N_VAR = 2
N_EDGE = 3
N_ATOM = 4
N_CAP = 5
OBS = 6
PRED_PROG = 7
MAX_STACK = 8
O_INIT_LOC = 9
O_VAR_INIT = 10
O_VAR_LO = 11
O_VAR_HI = 12
O_CLOCK_OWNER = 13
O_LOC_URGENT = 14
O_LOC_INV_START = 15
O_INV_CLOCK = 16
O_LOC_OUT_START = 17
O_OUT_EDGE = 18
O_E_COMP = 19
O_E_DST = 20
O_E_CHAN = 21
O_E_DIR = 22
O_E_CG_START = 23
O_CG_CLOCK = 24
O_CG_LOWER = 25
O_E_VG_START = 26
O_VG_PROG = 27
O_E_RS_START = 28
O_RS_CLOCK = 29
O_E_UP_START = 30
O_UP_VAR = 31
O_UP_PROG = 32
O_PROG_START = 33
O_OP = 34
O_IA = 35
O_IB = 36
O_ATOM_CLOCK = 37
O_CAP_CLOCK = 38
O_LOC_EXP_RATE = 39
O_INV_BOUND = 40
O_LOC_RATES = 41
O_E_WEIGHT = 42
O_CG_BOUND = 43
O_FA = 44
O_ATOM_BOUND = 45
O_CAP_BOUND = 46
O_OBS_BOUND = 47
assert [globals()[n.upper()] for n in _SLOTS] == list(range(len(_SLOTS)))
_N_SLOTS = 48


def _pack(fields: dict, names, dtype):
    offsets, parts, pos = {}, [], 0
    for name in names:
        a = np.asarray(fields[name], dtype=dtype).ravel()
        offsets["o_" + name] = pos
        parts.append(a)
        pos += a.size
    return (np.concatenate(parts) if parts else np.zeros(0, dtype)), offsets


def build_tables(network, formula: BoundFormula) -> Tables:
    net: ResolvedNetwork = network.resolve() if isinstance(network, Network) else network
    programs: list = []

    def prog(expr_obj) -> int:
        programs.append(expr_obj.code)
        return len(programs) - 1

    L = len(net.locations)
    inv_start, inv_clock, inv_bound = [0], [], []
    for loc in net.locations:
        for b in loc.invariant:
            inv_clock.append(b.clock)
            inv_bound.append(b.bound)
        inv_start.append(len(inv_clock))
    out_start, out_edge = [0], []
    for li in range(L):
        out_edge.extend(net.out_edges[li])
        out_start.append(len(out_edge))
    cg_start, cg_clock, cg_lower, cg_bound = [0], [], [], []
    vg_start, vg_prog = [0], []
    rs_start, rs_clock = [0], []
    up_start, up_var, up_prog = [0], [], []
    e_dir = []
    for e in net.edges:
        for b in e.guard.clock_conjuncts:
            cg_clock.append(b.clock)
            cg_lower.append(1 if b.is_lower else 0)
            cg_bound.append(b.bound)
        cg_start.append(len(cg_clock))
        for g in e.guard.var_conjuncts:
            vg_prog.append(prog(g))
        vg_start.append(len(vg_prog))
        rs_clock.extend(e.resets)
        rs_start.append(len(rs_clock))
        for var, ex in e.updates:
            up_var.append(var)
            up_prog.append(prog(ex))
        up_start.append(len(up_var))
        e_dir.append(1 if e.direction == EMIT else 2 if e.direction == RECEIVE else 0)
    pred = prog(formula.predicate)
    prog_start, op, ia, ib, fa = X.pack_programs(programs)
    max_stack = max([len(p) for p in programs] + [1]) + 1

    i64 = lambda a: np.asarray(a, dtype=np.int64)  # noqa: E731
    f64 = lambda a: np.asarray(a, dtype=np.float64)  # noqa: E731
    rates = np.zeros((max(L, 1), max(len(net.clock_names), 1)))
    for loc in net.locations:
        rates[loc.index, : len(loc.rates)] = loc.rates
    fields = dict(
        init_loc=i64(net.initial),
        var_init=i64(net.var_init),
        var_lo=i64(net.var_lo),
        var_hi=i64(net.var_hi),
        clock_owner=i64(net.clock_owner),
        loc_urgent=i64([1 if l.urgent else 0 for l in net.locations]),
        loc_exp_rate=f64([l.exp_rate for l in net.locations]),
        loc_inv_start=i64(inv_start),
        inv_clock=i64(inv_clock),
        inv_bound=f64(inv_bound),
        loc_rates=rates,
        loc_out_start=i64(out_start),
        out_edge=i64(out_edge),
        e_comp=i64([e.comp for e in net.edges]),
        e_dst=i64([e.target for e in net.edges]),
        e_chan=i64([e.channel for e in net.edges]),
        e_dir=i64(e_dir),
        e_weight=f64([e.weight for e in net.edges]),
        e_cg_start=i64(cg_start),
        cg_clock=i64(cg_clock),
        cg_lower=i64(cg_lower),
        cg_bound=f64(cg_bound),
        e_vg_start=i64(vg_start),
        vg_prog=i64(vg_prog),
        e_rs_start=i64(rs_start),
        rs_clock=i64(rs_clock),
        e_up_start=i64(up_start),
        up_var=i64(up_var),
        up_prog=i64(up_prog),
        prog_start=prog_start,
        op=op,
        ia=ia,
        ib=ib,
        fa=fa,
        atom_clock=i64([a[0] for a in formula.clock_atoms]),
        atom_bound=f64([a[2] for a in formula.clock_atoms]),
        cap_clock=i64([c[0] for c in formula.dead_caps]),
        cap_bound=f64([c[1] for c in formula.dead_caps]),
    )
    fields["obs_bound"] = [float(formula.bound)]
    I, o_int = _pack(fields, _INT_FIELDS, np.int64)
    F, o_float = _pack(fields, _FLOAT_FIELDS, np.float64)
    sizes = dict(
        n_comp=net.n_components,
        n_clock=len(net.clock_names),
        n_var=len(net.var_names),
        n_edge=len(net.edges),
        n_atom=len(formula.clock_atoms),
        n_cap=len(formula.dead_caps),
        obs=formula.observer,
        pred_prog=pred,
        max_stack=max_stack,
    )
    slots = {**sizes, **o_int, **o_float}
    O = np.array([slots[s] for s in _SLOTS], dtype=np.int64)
    return Tables(I, F, O)


# -- kernel helpers --------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


@nb.njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@nb.njit(cache=True)
def _stream_start(seed, stream):
    return _mix64(seed ^ _mix64(stream + _GOLDEN))


@nb.njit(cache=True, inline="always")
def _random(rs):
    rs[0] = rs[0] + _GOLDEN
    return np.float64(_mix64(rs[0]) >> _S11) * (2.0**-53)


@nb.njit(cache=True)
def _eval(T, p, vars_, clocks, locs, stack):
    I = T.I
    F = T.F
    o_op = T.O[O_OP]
    o_ia = T.O[O_IA]
    o_ib = T.O[O_IB]
    o_fa = T.O[O_FA]
    k0 = I[T.O[O_PROG_START] + p]
    k1 = I[T.O[O_PROG_START] + p + 1]
    sp = 0
    for k in range(k0, k1):
        op = I[o_op + k]
        if op == 0:
            stack[sp] = F[o_fa + k]
            sp += 1
        elif op == 1:
            stack[sp] = vars_[I[o_ia + k]]
            sp += 1
        elif op == 3:
            stack[sp] = 1.0 if locs[I[o_ia + k]] == I[o_ib + k] else 0.0
            sp += 1
        elif op == 4:
            v = clocks[I[o_ia + k]]
            if I[o_ib + k] <= 1:
                stack[sp] = 1.0 if v <= F[o_fa + k] + EPS else 0.0
            else:
                stack[sp] = 1.0 if v >= F[o_fa + k] - EPS else 0.0
            sp += 1
        elif op >= 30:
            a = stack[sp - 1]
            if op == 30:
                stack[sp - 1] = -a
            else:
                stack[sp - 1] = 1.0 if a == 0.0 else 0.0
        else:
            b = stack[sp - 1]
            a = stack[sp - 2]
            sp -= 1
            if op == 10:
                r = a + b
            elif op == 11:
                r = a - b
            elif op == 12:
                r = a * b
            elif op == 13:
                r = a / b
            elif op == 14:
                r = math.floor(a / b)
            elif op == 15:
                r = a - b * math.floor(a / b)
            elif op == 16:
                r = a**b
            elif op == 17:
                r = 1.0 if a < b else 0.0
            elif op == 18:
                r = 1.0 if a <= b else 0.0
            elif op == 19:
                r = 1.0 if a > b else 0.0
            elif op == 20:
                r = 1.0 if a >= b else 0.0
            elif op == 21:
                r = 1.0 if a == b else 0.0
            elif op == 22:
                r = 1.0 if a != b else 0.0
            elif op == 23:
                r = 1.0 if (a != 0.0 and b != 0.0) else 0.0
            else:
                r = 1.0 if (a != 0.0 or b != 0.0) else 0.0
            stack[sp - 1] = r
    return stack[0]


@nb.njit(cache=True, inline="always")
def _rate(T, locs, x):
    return T.F[T.O[O_LOC_RATES] + locs[T.I[T.O[O_CLOCK_OWNER] + x]] * T.O[N_CLOCK] + x]


@nb.njit(cache=True, inline="always")
def _comp_dmax(T, locs, clocks, c):
    loc = locs[c]
    if T.I[T.O[O_LOC_URGENT] + loc] == 1:
        return 0.0
    best = INF
    for k in range(T.I[T.O[O_LOC_INV_START] + loc], T.I[T.O[O_LOC_INV_START] + loc + 1]):
        x = T.I[T.O[O_INV_CLOCK] + k]
        b = T.F[T.O[O_INV_BOUND] + k]
        if clocks[x] > b + EPS:
            return -1.0
        r = T.F[T.O[O_LOC_RATES] + loc * T.O[N_CLOCK] + x]
        if r > 0:
            t = (b - clocks[x]) / r
            if t < 0.0:
                t = 0.0
            if t < best:
                best = t
    return best


@nb.njit(cache=True, inline="always")
def _var_guard(T, e, vars_, clocks, locs, stack):
    for k in range(T.I[T.O[O_E_VG_START] + e], T.I[T.O[O_E_VG_START] + e + 1]):
        if _eval(T, T.I[T.O[O_VG_PROG] + k], vars_, clocks, locs, stack) == 0.0:
            return False
    return True


@nb.njit(cache=True, inline="always")
def _guard(T, e, vars_, clocks, locs, stack):
    for k in range(T.I[T.O[O_E_CG_START] + e], T.I[T.O[O_E_CG_START] + e + 1]):
        v = clocks[T.I[T.O[O_CG_CLOCK] + k]]
        if T.I[T.O[O_CG_LOWER] + k] == 1:
            if not v >= T.F[T.O[O_CG_BOUND] + k] - EPS:
                return False
        else:
            if not v <= T.F[T.O[O_CG_BOUND] + k] + EPS:
                return False
    return _var_guard(T, e, vars_, clocks, locs, stack)


@nb.njit(cache=True, inline="always")
def _window_lo(T, e, vars_, clocks, locs, horizon, stack):
    if not _var_guard(T, e, vars_, clocks, locs, stack):
        return INF
    I = T.I
    F = T.F
    o_clock = T.O[O_CG_CLOCK]
    o_bound = T.O[O_CG_BOUND]
    o_lower = T.O[O_CG_LOWER]
    lo = 0.0
    hi = horizon
    for k in range(I[T.O[O_E_CG_START] + e], I[T.O[O_E_CG_START] + e + 1]):
        x = I[o_clock + k]
        b = F[o_bound + k]
        lower = I[o_lower + k] == 1
        r = _rate(T, locs, x)
        if r == 0:
            if lower:
                if not clocks[x] >= b - EPS:
                    return INF
            else:
                if not clocks[x] <= b + EPS:
                    return INF
            continue
        t = (b - clocks[x]) / r
        if lower:
            if t > lo:
                lo = t
        else:
            if t < hi:
                hi = t
    if lo > hi + EPS:
        return INF
    return lo


@nb.njit(cache=True, inline="always")
def _earliest(T, c, vars_, clocks, locs, dmax, stack):
    I = T.I
    o_out = T.O[O_OUT_EDGE]
    o_dir = T.O[O_E_DIR]
    o_w = T.O[O_E_WEIGHT]
    best = INF
    loc = locs[c]
    for k in range(I[T.O[O_LOC_OUT_START] + loc], I[T.O[O_LOC_OUT_START] + loc + 1]):
        e = I[o_out + k]
        if I[o_dir + e] == 2 or T.F[o_w + e] <= 0:
            continue
        lo = _window_lo(T, e, vars_, clocks, locs, dmax, stack)
        if lo < best:
            best = lo
    return best


@nb.njit(cache=True)
def _collect(T, c, vars_, clocks, locs, receive, chan, buf, stack):
    n = 0
    loc = locs[c]
    for k in range(T.I[T.O[O_LOC_OUT_START] + loc], T.I[T.O[O_LOC_OUT_START] + loc + 1]):
        e = T.I[T.O[O_OUT_EDGE] + k]
        if receive:
            if T.I[T.O[O_E_DIR] + e] != 2 or T.I[T.O[O_E_CHAN] + e] != chan:
                continue
        elif T.I[T.O[O_E_DIR] + e] == 2 or T.F[T.O[O_E_WEIGHT] + e] <= 0:
            continue
        if _guard(T, e, vars_, clocks, locs, stack):
            buf[n] = e
            n += 1
    return n


@nb.njit(cache=True, inline="always")
def _pick(T, buf, n, rs):
    if n == 1:
        return buf[0]
    total = 0.0
    for i in range(n):
        total += T.F[T.O[O_E_WEIGHT] + buf[i]]
    target = _random(rs) * total
    acc = 0.0
    for i in range(n):
        acc += T.F[T.O[O_E_WEIGHT] + buf[i]]
        if target < acc:
            return buf[i]
    return buf[n - 1]


@nb.njit(cache=True)
def _first_sat(T, locs, clocks, vars_, delay, instants, tmp_clocks, stack):
    I = T.I
    F = T.F
    nx = T.O[N_CLOCK]
    o_rates = T.O[O_LOC_RATES]
    o_owner = T.O[O_CLOCK_OWNER]
    bound = F[T.O[O_OBS_BOUND]]
    obs = clocks[T.O[OBS]]
    if obs > bound + EPS:
        return -1.0
    r_obs = _rate(T, locs, T.O[OBS])
    t_end = delay
    if r_obs > 0:
        q = (bound - obs) / r_obs
        if q < t_end:
            t_end = q
    if t_end < 0:
        t_end = 0.0
    # crossing instants inside (0, t_end), insertion-sorted in place
    instants[0] = 0.0
    m = 1
    o_ac = T.O[O_ATOM_CLOCK]
    o_ab = T.O[O_ATOM_BOUND]
    for k in range(T.O[N_ATOM]):
        x = I[o_ac + k]
        r = F[o_rates + locs[I[o_owner + x]] * nx + x]
        if r > 0:
            t = (F[o_ab + k] - clocks[x]) / r
            if 0.0 < t and t < t_end:
                j = m
                while j > 1 and instants[j - 1] > t:
                    instants[j] = instants[j - 1]
                    j -= 1
                instants[j] = t
                m += 1
    instants[m] = t_end
    m += 1
    pred = T.O[PRED_PROG]
    prev = -1.0
    first = True
    for i in range(m):
        t = instants[i]
        if not first and t == prev:
            continue
        for pass_ in range(2):
            if pass_ == 0:
                if first:
                    continue
                tt = (prev + t) * 0.5
            else:
                tt = t
            for x in range(nx):
                tmp_clocks[x] = clocks[x] + F[o_rates + locs[I[o_owner + x]] * nx + x] * tt
            if _eval(T, pred, vars_, tmp_clocks, locs, stack) != 0.0:
                return tt
        prev = t
        first = False
    return -1.0


@nb.njit(cache=True, inline="always")
def _check_state(T, locs, clocks, vars_, stack):
    if clocks[T.O[OBS]] > T.F[T.O[O_OBS_BOUND]] + EPS:
        return False
    return _eval(T, T.O[PRED_PROG], vars_, clocks, locs, stack) != 0.0


@nb.njit(cache=True, inline="always")
def _dead(T, clocks):
    for k in range(T.O[N_CAP]):
        if clocks[T.I[T.O[O_CAP_CLOCK] + k]] > T.F[T.O[O_CAP_BOUND] + k] + EPS:
            return True
    return False


@nb.njit(cache=True)
def _run_one(T, seed, stream, max_steps, tr_delay, tr_winner, tr_edge, tr_recv, status):
    """One simulation. Returns (outcome, witness, reason, steps).

    ``status`` receives (error code, error subject) on model errors.
    Tracing is active when ``tr_delay`` has nonzero length.
    """
    nc = T.O[N_COMP]
    nx = T.O[N_CLOCK]
    locs = T.I[T.O[O_INIT_LOC]:T.O[O_INIT_LOC] + nc].copy()
    clocks = np.zeros(nx)
    vars_ = T.I[T.O[O_VAR_INIT]:T.O[O_VAR_INIT] + T.O[N_VAR]].copy()
    pre_clocks = np.zeros(nx)
    pre_locs = locs.copy()
    pre_vars = vars_.copy()
    tmp_clocks = np.zeros(nx)
    stack = np.zeros(T.O[MAX_STACK])
    dmax = np.zeros(nc)
    prop = np.zeros(nc)
    buf = np.zeros(T.O[N_EDGE] + 1, dtype=np.int64)
    moves = np.zeros(nc, dtype=np.int64)
    instants = np.zeros(T.O[N_ATOM] + 2)
    rs = np.zeros(1, dtype=np.uint64)
    rs[0] = _stream_start(seed, stream)
    trace_cap = tr_delay.shape[0]
    elapsed = 0.0
    status[0] = E_NONE
    status[1] = -1

    if _check_state(T, locs, clocks, vars_, stack):
        return OUT_SATISFIED, 0.0, R_NONE, 0
    if clocks[T.O[OBS]] > T.F[T.O[O_OBS_BOUND]] + EPS or _dead(T, clocks):
        return OUT_VIOLATED, -1.0, R_DEAD, 0

    for step in range(max_steps):
        # 1. invariant limits
        gmax = INF
        for c in range(nc):
            d = _comp_dmax(T, locs, clocks, c)
            if d < 0:
                status[0] = E_STATE_INV
                status[1] = c
                return OUT_VIOLATED, -1.0, R_NONE, step
            dmax[c] = d
            if d < gmax:
                gmax = d
        # 2. proposals
        best = INF
        for c in range(nc):
            lo = _earliest(T, c, vars_, clocks, locs, dmax[c], stack)
            if lo == INF:
                prop[c] = INF
            elif dmax[c] < INF:
                u = _random(rs)
                prop[c] = lo + (dmax[c] - lo) * u
            else:
                u = _random(rs)
                prop[c] = lo + (-math.log(1.0 - u) / T.F[T.O[O_LOC_EXP_RATE] + locs[c]])
            if prop[c] < best:
                best = prop[c]
        # 3. winner
        winner = -1
        if best == INF or best > gmax:
            if gmax == INF:
                # no discrete transition ever again: decide over the remaining time
                r = _rate(T, locs, T.O[OBS])
                horizon = (T.F[T.O[O_OBS_BOUND]] - clocks[T.O[OBS]]) / r if r > 0 else INF
                if horizon >= 0 and horizon < INF:
                    t = _first_sat(T, locs, clocks, vars_, horizon, instants, tmp_clocks, stack)
                    if t >= 0:
                        return OUT_SATISFIED, elapsed + t, R_DEADLOCK, step
                return OUT_VIOLATED, -1.0, R_DEADLOCK, step
            if gmax == 0.0:
                return OUT_VIOLATED, -1.0, R_TIMELOCK, step
            delay = gmax
        else:
            delay = best
            nt = 0
            for c in range(nc):
                if prop[c] == best:
                    nt += 1
            k = 0
            if nt > 1:
                k = int(_random(rs) * nt)
                if k > nt - 1:
                    k = nt - 1
            for c in range(nc):
                if prop[c] == best:
                    if k == 0:
                        winner = c
                        break
                    k -= 1
        # 4. delay
        for x in range(nx):
            pre_clocks[x] = clocks[x]
        for c in range(nc):
            pre_locs[c] = locs[c]
        pre_elapsed = elapsed
        if delay != 0.0:
            for x in range(nx):
                clocks[x] = clocks[x] + T.F[T.O[O_LOC_RATES] + locs[T.I[T.O[O_CLOCK_OWNER] + x]] * T.O[N_CLOCK] + x] * delay
            elapsed = elapsed + delay
        for v in range(vars_.shape[0]):
            pre_vars[v] = vars_[v]
        fired = -1
        nmoves = 0
        if winner >= 0:
            n = _collect(T, winner, vars_, clocks, locs, False, -1, buf, stack)
            if n > 0:
                fired = _pick(T, buf, n, rs)
                moves[0] = fired
                nmoves = 1
                if T.I[T.O[O_E_DIR] + fired] == 1:
                    ch = T.I[T.O[O_E_CHAN] + fired]
                    for c in range(nc):
                        if c == winner:
                            continue
                        n2 = _collect(T, c, vars_, clocks, locs, True, ch, buf, stack)
                        if n2 > 0:
                            moves[nmoves] = _pick(T, buf, n2, rs)
                            nmoves += 1
        if step < trace_cap:
            tr_delay[step] = delay
            tr_winner[step] = winner if fired >= 0 else -1
            tr_edge[step] = fired
            for c in range(nc):
                tr_recv[step, c] = -1
            for i in range(1, nmoves):
                tr_recv[step, T.I[T.O[O_E_COMP] + moves[i]]] = moves[i]
        # 5. fire
        for i in range(nmoves):
            e = moves[i]
            for k in range(T.I[T.O[O_E_UP_START] + e], T.I[T.O[O_E_UP_START] + e + 1]):
                v = _eval(T, T.I[T.O[O_UP_PROG] + k], vars_, clocks, locs, stack)
                var = T.I[T.O[O_UP_VAR] + k]
                iv = int(v)
                if v != iv:
                    status[0] = E_NONINT
                    status[1] = var
                    return OUT_VIOLATED, -1.0, R_NONE, step
                if iv < T.I[T.O[O_VAR_LO] + var] or iv > T.I[T.O[O_VAR_HI] + var]:
                    status[0] = E_RANGE
                    status[1] = var
                    return OUT_VIOLATED, -1.0, R_NONE, step
                vars_[var] = iv
            for k in range(T.I[T.O[O_E_RS_START] + e], T.I[T.O[O_E_RS_START] + e + 1]):
                clocks[T.I[T.O[O_RS_CLOCK] + k]] = 0.0
            locs[T.I[T.O[O_E_COMP] + e]] = T.I[T.O[O_E_DST] + e]
        for i in range(nmoves):
            e = moves[i]
            loc = T.I[T.O[O_E_DST] + e]
            for k in range(T.I[T.O[O_LOC_INV_START] + loc], T.I[T.O[O_LOC_INV_START] + loc + 1]):
                if clocks[T.I[T.O[O_INV_CLOCK] + k]] > T.F[T.O[O_INV_BOUND] + k] + EPS:
                    status[0] = E_TARGET_INV
                    status[1] = e
                    return OUT_VIOLATED, -1.0, R_NONE, step
        # 6. monitor: the delay interval from the pre state, then the post state
        t = _first_sat(T, pre_locs, pre_clocks, pre_vars, delay, instants, tmp_clocks, stack)
        if t >= 0:
            return OUT_SATISFIED, pre_elapsed + t, R_NONE, step + 1
        if clocks[T.O[OBS]] > T.F[T.O[O_OBS_BOUND]] + EPS:
            return OUT_VIOLATED, -1.0, R_NONE, step + 1
        if _check_state(T, locs, clocks, vars_, stack):
            return OUT_SATISFIED, elapsed, R_NONE, step + 1
        if _dead(T, clocks):
            return OUT_VIOLATED, -1.0, R_DEAD, step + 1
    return OUT_VIOLATED, -1.0, R_STEP_CAP, max_steps


@nb.njit(cache=True)
def _run_batch(T, seed, key, start, count, max_steps, counts, status):
    """Run simulations ``start .. start+count-1``; ``counts`` accumulates
    [satisfied, violated, step_cap, deadlock, timelock]."""
    tr_d = np.zeros(0)
    tr_w = np.zeros(0, dtype=np.int64)
    tr_r = np.zeros((0, 0), dtype=np.int64)
    for i in range(start, start + count):
        outcome, _, reason, _ = _run_one(
            T, seed, key ^ np.uint64(i), max_steps, tr_d, tr_w, tr_w, tr_r, status
        )
        if status[0] != E_NONE:
            status[2] = i
            return
        if outcome == OUT_SATISFIED:
            counts[0] += 1
        else:
            counts[1] += 1
        if reason == R_STEP_CAP:
            counts[2] += 1
        elif reason == R_DEADLOCK:
            counts[3] += 1
        elif reason == R_TIMELOCK:
            counts[4] += 1


class CompiledModel:
    """A network plus goal formula, flattened for the compiled kernel."""

    def __init__(self, network, formula: BoundFormula, max_steps: int = DEFAULT_MAX_STEPS):
        self.net = network.resolve() if isinstance(network, Network) else network
        self.formula = formula
        self.max_steps = int(max_steps)
        self.tables = build_tables(self.net, formula)

    def _raise(self, status) -> None:
        code, subject = int(status[0]), int(status[1])
        if code == E_RANGE:
            raise RangeError(f"update leaves the range of {self.net.var_names[subject]}")
        if code == E_NONINT:
            raise RangeError(f"update of {self.net.var_names[subject]} yields a non-integer")
        if code == E_TARGET_INV:
            raise SemanticError(
                f"target invariant violated by {self.net.edge_label(self.net.edges[subject])}"
            )
        raise SemanticError(f"state violates an invariant of {self.net.comp_names[subject]}")

    def run_batch(self, seed: int, key: int, start: int, count: int) -> np.ndarray:
        """Counts [satisfied, violated, step_cap, deadlock, timelock]."""
        counts = np.zeros(5, dtype=np.int64)
        status = np.zeros(3, dtype=np.int64)
        _run_batch(
            self.tables, np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(key & 0xFFFFFFFFFFFFFFFF),
            int(start), int(count), self.max_steps, counts, status,
        )
        if status[0] != E_NONE:
            self._raise(status)
        return counts

    def run_traced(self, seed: int, stream: int, trace_cap: int = 100_000) -> Run:
        """One recorded run, rebuilt as a :class:`~nashsmc.race.Run` by
        replaying the recorded choices through the reference semantics."""
        nc = self.net.n_components
        tr_d = np.zeros(trace_cap)
        tr_w = np.zeros(trace_cap, dtype=np.int64)
        tr_e = np.zeros(trace_cap, dtype=np.int64)
        tr_r = np.zeros((trace_cap, nc), dtype=np.int64)
        status = np.zeros(3, dtype=np.int64)
        outcome, witness, reason, steps = _run_one(
            self.tables, np.uint64(seed & 0xFFFFFFFFFFFFFFFF),
            np.uint64(stream & 0xFFFFFFFFFFFFFFFF), self.max_steps, tr_d, tr_w, tr_e, tr_r, status,
        )
        if status[0] != E_NONE:
            self._raise(status)
        if steps > trace_cap:
            raise ValueError(f"run has {steps} steps, more than trace_cap={trace_cap}")
        net = self.net
        state = initial_state(net)
        run = Run(initial=state, steps=[])
        for k in range(steps):
            moved = apply_delay(net, state, float(tr_d[k]))
            e = int(tr_e[k])
            if e < 0:
                step = RunStep(float(tr_d[k]), None, moved)
            else:
                edge = net.edges[e]
                receivers = {c: net.edges[int(tr_r[k, c])] for c in range(nc) if tr_r[k, c] >= 0}
                post = fire(net, moved, [edge] + [receivers[c] for c in sorted(receivers)])
                step = RunStep(float(tr_d[k]), (int(tr_w[k]), edge), post, receivers)
            run.steps.append(step)
            state = step.post_state
        run.reason = REASONS[int(reason)]
        run.truncated = bool(run.reason)
        run.verdict = Verdict(
            SATISFIED if outcome == OUT_SATISFIED else VIOLATED,
            float(witness) if outcome == OUT_SATISFIED else None,
            run.reason,
        )
        return run
