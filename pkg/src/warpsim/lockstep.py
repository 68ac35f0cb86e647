"""Lockstep SIMT evaluation of kernel IR.

Two executors share one expression evaluator:

* ``GridExecutor`` runs every thread of a launch at once, carrying the
  active set as a sorted array of lane positions and projecting each issued
  statement onto hardware warps for accounting.  This is what ``simulate``
  uses for functional results and per-warp issue counts.
* ``WarpState`` / ``execute_warp_step`` steps a single warp one issued
  statement at a time with an explicit mask stack.  The cycle-level
  scheduler drives warps through it.

Masks split on ``If`` (then before else) and reconverge at the end of the
construct.  Lanes that execute ``Halt`` are retired for the rest of the
kernel; a halt is recorded as an issue but costs no cycles.  A split
records a divergence event unless one side is a bare ``Halt`` (retiring
lanes never rejoin, so nothing is serialized).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .ir import (
    HALT_ONLY, Assign, Binary, Const, GlobalLoad, GlobalStore, Halt, If,
    KernelError, KernelProgram, LaneFault, LaunchConfig, RngDraw, Special,
    Unary, Var, While, statement_kind,
)
from .rng import LaneRng, RngState, ln

DEFAULT_MAX_DEPTH = 32
_DTYPES = {"f64": np.float64, "i64": np.int64}
_CMP = {"lt": np.less, "le": np.less_equal, "gt": np.greater,
        "ge": np.greater_equal, "eq": np.equal, "ne": np.not_equal}


def special_values(name: str, gids: np.ndarray, cfg: LaunchConfig) -> np.ndarray:
    bx, by, bz = cfg.block_dim
    tpb = cfg.threads_per_block
    if name == "warpSize":
        return np.full(gids.shape, cfg.warp_size, dtype=np.int64)
    kind, axis = name.split(".")
    if kind == "blockDim":
        return np.full(gids.shape, cfg.block_dim["xyz".index(axis)], dtype=np.int64)
    if kind == "gridDim":
        return np.full(gids.shape, cfg.grid_dim["xy".index(axis)], dtype=np.int64)
    intra = gids % tpb
    block = gids // tpb
    if name == "threadIdx.x":
        return intra % bx
    if name == "threadIdx.y":
        return (intra // bx) % by
    if name == "threadIdx.z":
        return intra // (bx * by)
    if name == "blockIdx.x":
        return block % cfg.grid_dim[0]
    return block // cfg.grid_dim[0]


def _ieee(fn):
    """Run with IEEE semantics and no numpy warnings for inf/nan results."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with np.errstate(all="ignore"):
            return fn(*args, **kwargs)
    return wrapper


def _is_int(a) -> bool:
    return np.asarray(a).dtype.kind in "iub"


def _trunc_div(a, b):
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    q = np.floor_divide(a, b)
    fix = (q < 0) & (q * b != a)
    return np.where(fix, q + 1, q)


class LaneFile:
    """Registers, special-register values and RNG streams for a set of lanes."""

    def __init__(self, program: KernelProgram, cfg: LaunchConfig, gids,
                 rng: LaneRng, args: Mapping[str, float], memory: Dict[str, np.ndarray]):
        self.program = program
        self.cfg = cfg
        self.gids = np.asarray(gids, dtype=np.int64)
        self.n = len(self.gids)
        self.rng = rng
        self.memory = memory
        self.regs = {loc.name: np.zeros(self.n, dtype=_DTYPES[loc.dtype])
                     for loc in program.locals}
        self.dtypes = {loc.name: loc.dtype for loc in program.locals}
        self.args = {}
        for name in program.scalar_params:
            if name not in args:
                raise KernelError(f"missing value for scalar parameter {name!r}")
            value = args[name]
            self.args[name] = np.int64(value) if isinstance(value, (int, np.integer)) \
                else np.float64(value)
        for name in program.array_params:
            if name not in memory:
                raise KernelError(f"no global array bound to parameter {name!r}")
        self._special_cache = {}

    # sel is None for "every lane" or a sorted array of lane positions
    def _lane(self, sel, pos) -> int:
        p = pos if sel is None else sel[pos]
        return int(self.gids[p])

    def special(self, name, sel):
        vals = self._special_cache.get(name)
        if vals is None:
            vals = self._special_cache[name] = special_values(name, self.gids, self.cfg)
        return vals if sel is None else vals[sel]

    def fault(self, sel, bad, message):
        # a constant operand gives a scalar flag: blame the first active lane
        pos = int(np.flatnonzero(np.atleast_1d(bad))[0])
        raise LaneFault(message, self._lane(sel, pos))

    def eval(self, expr, sel):
        if isinstance(expr, Const):
            v = expr.value
            return np.int64(v) if isinstance(v, (int, np.integer)) else np.float64(v)
        if isinstance(expr, Var):
            reg = self.regs.get(expr.name)
            if reg is not None:
                return reg if sel is None else reg[sel]
            return self.args[expr.name]
        if isinstance(expr, Special):
            return self.special(expr.name, sel)
        if isinstance(expr, RngDraw):
            ok = self.rng.valid if sel is None else self.rng.valid[sel]
            if not ok.all():
                self.fault(sel, ~ok, "RngDraw on a lane without an attached stream")
            return self.rng.uniform(sel)
        if isinstance(expr, Unary):
            a = self.eval(expr.arg, sel)
            op = expr.op
            if op == "neg":
                return -a
            if op == "not":
                return (a == 0).astype(np.int64)
            if op == "floor":
                return np.floor(np.asarray(a, dtype=np.float64))
            a = np.asarray(a, dtype=np.float64)
            bad = ~(a > 0)
            if bad.any():
                self.fault(sel, bad, "log of a non-positive value")
            return ln(a)
        if isinstance(expr, Binary):
            a = self.eval(expr.lhs, sel)
            b = self.eval(expr.rhs, sel)
            op = expr.op
            if op == "add":
                return a + b
            if op == "sub":
                return a - b
            if op == "mul":
                return a * b
            if op in _CMP:
                return _CMP[op](a, b).astype(np.int64)
            if op == "and":
                return ((a != 0) & (b != 0)).astype(np.int64)
            if op == "or":
                return ((a != 0) | (b != 0)).astype(np.int64)
            zero = np.asarray(b == 0)
            if zero.any():
                self.fault(sel, zero, f"{op} by zero")
            ints = _is_int(a) and _is_int(b)
            if op == "div":
                return _trunc_div(a, b) if ints else np.true_divide(a, b)
            return np.fmod(a, b)
        raise KernelError(f"cannot evaluate {expr!r}")

    def truthy(self, expr, sel) -> np.ndarray:
        v = self.eval(expr, sel)
        n = self.n if sel is None else len(sel)
        return np.broadcast_to(np.asarray(v) != 0, (n,))

    def cast(self, local, value, sel):
        n = self.n if sel is None else len(sel)
        value = np.broadcast_to(value, (n,))
        if self.dtypes[local] == "i64" and not _is_int(value):
            bad = ~np.isfinite(value)
            if bad.any():
                self.fault(sel, bad, f"non-finite value assigned to integer {local!r}")
            return np.trunc(value).astype(np.int64)
        return value

    def assign(self, local, value, sel):
        value = self.cast(local, value, sel)
        if sel is None:
            self.regs[local][:] = value
        else:
            self.regs[local][sel] = value

    def index(self, array, expr, sel) -> np.ndarray:
        n = self.n if sel is None else len(sel)
        raw = np.broadcast_to(self.eval(expr, sel), (n,))
        if not _is_int(raw):
            bad = ~np.isfinite(raw) | (raw != np.floor(raw))
            if bad.any():
                self.fault(sel, bad, f"non-integral index into {array!r}")
            raw = raw.astype(np.int64)
        size = len(self.memory[array])
        bad = (raw < 0) | (raw >= size)
        if bad.any():
            self.fault(sel, bad, f"index out of bounds for {array!r} (size {size})")
        return raw

    def load(self, stmt: GlobalLoad, sel):
        where = self.index(stmt.array, stmt.index, sel)
        self.assign(stmt.local, self.memory[stmt.array][where], sel)

    def store(self, stmt: GlobalStore, sel):
        where = self.index(stmt.array, stmt.index, sel)
        n = self.n if sel is None else len(sel)
        self.memory[stmt.array][where] = np.broadcast_to(
            np.asarray(self.eval(stmt.value, sel), dtype=np.float64), (n,))


def _lane_rng(gids: np.ndarray, seeds) -> LaneRng:
    if seeds is None:
        return LaneRng([None] * len(gids))
    if isinstance(seeds, Mapping):
        return LaneRng([seeds.get(int(g)) for g in gids])
    return LaneRng([seeds[int(g)] if int(g) < len(seeds) else None for g in gids])


def hardware_warp_of(gids: np.ndarray, cfg: LaunchConfig) -> np.ndarray:
    """Warps are packed per block, 32 consecutive intra-block ids each."""
    tpb = cfg.threads_per_block
    return (gids // tpb) * cfg.warps_per_block + (gids % tpb) // cfg.warp_size


def _uniq_sorted(a: np.ndarray) -> np.ndarray:
    if a.size <= 1:
        return a
    keep = np.empty(a.size, dtype=bool)
    keep[0] = True
    np.not_equal(a[1:], a[:-1], out=keep[1:])
    return a[keep]


@dataclass
class GridResult:
    alu: np.ndarray
    loads: np.ndarray
    stores: np.ndarray
    divergence: np.ndarray
    draws: np.ndarray
    halts: np.ndarray
    trace: Optional[list] = None

    def mem(self) -> np.ndarray:
        return self.loads + self.stores


class GridExecutor:
    """Execute a whole launch in lockstep with per-warp issue accounting."""

    def __init__(self, program: KernelProgram, cfg: LaunchConfig,
                 memory: Dict[str, np.ndarray], seeds=None,
                 args: Optional[Mapping[str, float]] = None,
                 max_depth: int = DEFAULT_MAX_DEPTH, trace: bool = False):
        gids = np.arange(cfg.num_threads, dtype=np.int64)
        self.program = program
        self.lanes = LaneFile(program, cfg, gids, _lane_rng(gids, seeds), args or {}, memory)
        self.hw = hardware_warp_of(gids, cfg)
        nw = cfg.num_warps
        self.alu = np.zeros(nw, dtype=np.int64)
        self.loads = np.zeros(nw, dtype=np.int64)
        self.stores = np.zeros(nw, dtype=np.int64)
        self.divergence = np.zeros(nw, dtype=np.int64)
        self.halts = np.zeros(nw, dtype=np.int64)
        self.halted = np.zeros(len(gids), dtype=bool)
        self.epoch = 0
        self.max_depth = max_depth
        self.trace = [] if trace else None

    @_ieee
    def run(self) -> GridResult:
        self._body(self.program.body, np.arange(self.lanes.n, dtype=np.int64), 0)
        return GridResult(self.alu, self.loads, self.stores, self.divergence,
                          self.lanes.rng.draws.copy(), self.halts, self.trace)

    def _sel(self, idx):
        return None if idx.size == self.lanes.n else idx

    def _live(self, idx, epoch):
        if epoch == self.epoch:
            return idx
        return idx[~self.halted[idx]]

    def _record(self, stmt, idx, counter, divergent_warps=None):
        warps = _uniq_sorted(self.hw[idx])
        counter[warps] += 1
        if divergent_warps is not None and divergent_warps.size:
            self.divergence[divergent_warps] += 1
        if self.trace is not None:
            dw = set() if divergent_warps is None else set(divergent_warps.tolist())
            for w in warps.tolist():
                lanes = idx[self.hw[idx] == w]
                self.trace.append((w, statement_kind(stmt), int(lanes.size), w in dw,
                                   tuple(int(x) for x in self.lanes.gids[lanes]), stmt))

    def _split(self, idx, cond):
        c = self.lanes.truthy(cond, self._sel(idx))
        return idx[c], idx[~c]

    def _both(self, a, b):
        return np.intersect1d(_uniq_sorted(self.hw[a]), _uniq_sorted(self.hw[b]),
                              assume_unique=True)

    def _enter(self, depth):
        if depth > self.max_depth:
            raise KernelError(f"mask stack overflow: nesting deeper than {self.max_depth}")

    def _body(self, body, idx, depth):
        for stmt in body:
            if idx.size == 0:
                return
            epoch = self.epoch
            self._stmt(stmt, idx, depth)
            idx = self._live(idx, epoch)

    def _stmt(self, stmt, idx, depth):
        lanes = self.lanes
        if isinstance(stmt, Assign):
            lanes.assign(stmt.local, lanes.eval(stmt.value, self._sel(idx)), self._sel(idx))
            self._record(stmt, idx, self.alu)
        elif isinstance(stmt, GlobalLoad):
            lanes.load(stmt, self._sel(idx))
            self._record(stmt, idx, self.loads)
        elif isinstance(stmt, GlobalStore):
            lanes.store(stmt, self._sel(idx))
            self._record(stmt, idx, self.stores)
        elif isinstance(stmt, If):
            t_idx, e_idx = self._split(idx, stmt.cond)
            div = None
            if t_idx.size and e_idx.size and HALT_ONLY not in (stmt.then, stmt.orelse):
                div = self._both(t_idx, e_idx)
            self._record(stmt, idx, self.alu, div)
            if t_idx.size and stmt.then:
                self._enter(depth + 1)
                self._body(stmt.then, t_idx, depth + 1)
            if e_idx.size and stmt.orelse:
                self._enter(depth + 1)
                e_idx = e_idx[~self.halted[e_idx]]
                self._body(stmt.orelse, e_idx, depth + 1)
        elif isinstance(stmt, While):
            self._enter(depth + 1)
            loop = idx
            while True:
                loop = loop[~self.halted[loop]] if self.epoch else loop
                if loop.size == 0:
                    break
                cont, gone = self._split(loop, stmt.cond)
                div = self._both(cont, gone) if cont.size and gone.size else None
                self._record(stmt, loop, self.alu, div)
                if cont.size == 0:
                    break
                self._body(stmt.body, cont, depth + 1)
                loop = cont
        elif isinstance(stmt, Halt):
            self._record(stmt, idx, self.halts)
            self.halted[idx] = True
            self.epoch += 1
        else:
            raise KernelError(f"unknown statement {stmt!r}")


# -- single-warp stepper ------------------------------------------------------

@dataclass(frozen=True)
class IssueRecord:
    warp: int
    kind: str
    active_lanes: int
    divergent: bool
    lanes: tuple = ()
    statement: object = field(default=None, compare=False, repr=False)

    @property
    def is_memory(self) -> bool:
        return self.kind in ("load", "store")


@dataclass
class _BodyFrame:
    stmts: tuple
    mask: np.ndarray
    depth: int
    pc: int = 0
    # else body of a split branch, started when this then body finishes
    sibling: Optional["_BodyFrame"] = None


@dataclass
class _LoopFrame:
    stmt: While
    mask: np.ndarray
    depth: int


class WarpState:
    """One hardware warp: lane registers and streams, mask stack, position."""

    def __init__(self, program: KernelProgram, cfg: LaunchConfig, warp: int,
                 memory: Dict[str, np.ndarray], seeds=None,
                 args: Optional[Mapping[str, float]] = None,
                 max_depth: int = DEFAULT_MAX_DEPTH, slot: int = 0):
        wpb = cfg.warps_per_block
        block, w_in_block = divmod(warp, wpb)
        first = w_in_block * cfg.warp_size
        last = min(first + cfg.warp_size, cfg.threads_per_block)
        gids = block * cfg.threads_per_block + np.arange(first, last, dtype=np.int64)
        self.warp = warp
        self.slot = slot
        self.program = program
        self.lanes = LaneFile(program, cfg, gids, _lane_rng(gids, seeds), args or {}, memory)
        self.halted = np.zeros(len(gids), dtype=bool)
        self.frames: List[object] = [_BodyFrame(program.body, np.ones(len(gids), dtype=bool), 0)]
        self.max_depth = max_depth
        self.issued = 0
        self.divergence_events = 0

    @property
    def gids(self) -> np.ndarray:
        return self.lanes.gids

    @property
    def mask_stack(self) -> List[np.ndarray]:
        """Active masks from the kernel entry (bottom) to the innermost construct."""
        return [f.mask & ~self.halted for f in self.frames]

    @property
    def active_mask(self) -> np.ndarray:
        if not self.frames:
            return np.zeros(len(self.halted), dtype=bool)
        return self.frames[-1].mask & ~self.halted

    @property
    def finished(self) -> bool:
        self._settle()
        return not self.frames

    def _push(self, frame):
        if frame.depth > self.max_depth:
            raise KernelError(f"mask stack overflow: nesting deeper than {self.max_depth}")
        self.frames.append(frame)

    def _settle(self):
        """Pop exhausted frames; stop at the next frame that will issue."""
        while self.frames:
            top = self.frames[-1]
            live = top.mask & ~self.halted
            if not live.any() or (isinstance(top, _BodyFrame) and top.pc >= len(top.stmts)):
                self.frames.pop()
                if isinstance(top, _BodyFrame) and top.sibling is not None:
                    self.frames.append(top.sibling)
            elif isinstance(top, _BodyFrame) and isinstance(top.stmts[top.pc], While):
                stmt = top.stmts[top.pc]
                top.pc += 1
                self._push(_LoopFrame(stmt, live.copy(), top.depth + 1))
            else:
                return


def _mask_of(n, positions):
    m = np.zeros(n, dtype=bool)
    m[positions] = True
    return m


@_ieee
def execute_warp_step(w: WarpState, program: Optional[KernelProgram] = None,
                      memory=None) -> Optional[IssueRecord]:
    """Issue the warp's next statement over its current active mask.

    Returns ``None`` once the warp has nothing left to issue.  ``program``
    and ``memory`` default to the ones the warp was built with.
    """
    if program is not None and program is not w.program:
        raise KernelError("warp state belongs to a different program")
    if memory is not None and memory is not w.lanes.memory:
        raise KernelError("warp state is bound to a different memory object")
    w._settle()
    if not w.frames:
        return None
    lanes = w.lanes
    top = w.frames[-1]
    live = top.mask & ~w.halted
    idx = np.flatnonzero(live)
    sel = None if idx.size == lanes.n else idx
    divergent = False

    if isinstance(top, _LoopFrame):
        stmt = top.stmt
        c = lanes.truthy(stmt.cond, sel)
        cont = idx[c]
        divergent = bool(cont.size and cont.size < idx.size)
        if cont.size == 0:
            w.frames.pop()
        else:
            top.mask = _mask_of(lanes.n, cont)
            w._push(_BodyFrame(stmt.body, top.mask.copy(), top.depth))
    else:
        stmt = top.stmts[top.pc]
        top.pc += 1
        if isinstance(stmt, Assign):
            lanes.assign(stmt.local, lanes.eval(stmt.value, sel), sel)
        elif isinstance(stmt, GlobalLoad):
            lanes.load(stmt, sel)
        elif isinstance(stmt, GlobalStore):
            lanes.store(stmt, sel)
        elif isinstance(stmt, Halt):
            w.halted[idx] = True
        elif isinstance(stmt, If):
            c = lanes.truthy(stmt.cond, sel)
            t_idx, e_idx = idx[c], idx[~c]
            divergent = bool(t_idx.size and e_idx.size
                             and HALT_ONLY not in (stmt.then, stmt.orelse))
            orelse = None
            if e_idx.size and stmt.orelse:
                orelse = _BodyFrame(stmt.orelse, _mask_of(lanes.n, e_idx), top.depth + 1)
            if t_idx.size and stmt.then:
                w._push(_BodyFrame(stmt.then, _mask_of(lanes.n, t_idx), top.depth + 1,
                                   sibling=orelse))
            elif orelse is not None:
                w._push(orelse)
        else:
            raise KernelError(f"unknown statement {stmt!r}")

    w.issued += 1
    w.divergence_events += divergent
    return IssueRecord(w.warp, statement_kind(stmt), int(idx.size), divergent,
                       tuple(int(g) for g in lanes.gids[idx]), stmt)


def run_warp(w: WarpState) -> List[IssueRecord]:
    records = []
    while True:
        rec = execute_warp_step(w)
        if rec is None:
            return records
        records.append(rec)


def seeds_by_gid(states: Sequence[Optional[RngState]]) -> Dict[int, RngState]:
    return {g: s for g, s in enumerate(states) if s is not None}
