"""Scalar, one-thread-at-a-time interpreter used to check the SIMT executors.

Threads run to completion in global-id order with plain Python numbers.
There is no masking and no warp bookkeeping, so agreement with the lockstep
executors on memory contents and draw counts is a meaningful cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Mapping, Optional

import numpy as np

from .ir import (
    Assign, Binary, Const, GlobalLoad, GlobalStore, Halt, If, KernelError,
    KernelProgram, LaneFault, LaunchConfig, Local, RngDraw, Special, Unary, Var, While,
    coords_of,
)
from .rng import RngState, Stream, ln


class _Halted(Exception):
    pass


def _special(name: str, gid: int, cfg: LaunchConfig) -> int:
    t, b = coords_of(gid, cfg)
    table = {
        "threadIdx.x": t.x, "threadIdx.y": t.y, "threadIdx.z": t.z,
        "blockIdx.x": b.x, "blockIdx.y": b.y,
        "blockDim.x": cfg.block_dim[0], "blockDim.y": cfg.block_dim[1],
        "blockDim.z": cfg.block_dim[2],
        "gridDim.x": cfg.grid_dim[0], "gridDim.y": cfg.grid_dim[1],
        "warpSize": cfg.warp_size,
    }
    return table[name]


def _tdiv(a: int, b: int) -> int:
    q = abs(a) // abs(b)
    return q if (a < 0) == (b < 0) else -q


class _Thread:
    def __init__(self, locals_, cfg, gid, stream, args, memory):
        self.cfg = cfg
        self.gid = gid
        self.stream = stream
        self.args = args
        self.memory = memory
        self.draws = 0
        self.issued = 0
        self.loads = 0
        self.stores = 0
        self.dtypes = {loc.name: loc.dtype for loc in locals_}
        self.regs = {loc.name: (0 if loc.dtype == "i64" else 0.0) for loc in locals_}

    def fault(self, message):
        raise LaneFault(message, self.gid)

    def eval(self, e):
        if isinstance(e, Const):
            return e.value
        if isinstance(e, Var):
            return self.regs[e.name] if e.name in self.regs else self.args[e.name]
        if isinstance(e, Special):
            return _special(e.name, self.gid, self.cfg)
        if isinstance(e, RngDraw):
            if self.stream is None:
                self.fault("RngDraw on a lane without an attached stream")
            self.draws += 1
            return self.stream.uniform()
        if isinstance(e, Unary):
            a = self.eval(e.arg)
            if e.op == "neg":
                return -a
            if e.op == "not":
                return int(a == 0)
            if e.op == "floor":
                return float(math.floor(a)) if math.isfinite(a) else float(a)
            if not a > 0:
                self.fault("log of a non-positive value")
            return ln(float(a))
        a = self.eval(e.lhs)
        b = self.eval(e.rhs)
        op = e.op
        if op == "add":
            return a + b
        if op == "sub":
            return a - b
        if op == "mul":
            return a * b
        if op == "lt":
            return int(a < b)
        if op == "le":
            return int(a <= b)
        if op == "gt":
            return int(a > b)
        if op == "ge":
            return int(a >= b)
        if op == "eq":
            return int(a == b)
        if op == "ne":
            return int(a != b)
        if op == "and":
            return int(a != 0 and b != 0)
        if op == "or":
            return int(a != 0 or b != 0)
        if b == 0:
            self.fault(f"{op} by zero")
        both_int = isinstance(a, int) and isinstance(b, int)
        if op == "div":
            return _tdiv(a, b) if both_int else a / b
        if both_int:
            return a - b * _tdiv(a, b)
        try:
            return math.fmod(a, b)
        except ValueError:  # infinite dividend
            return math.nan

    def put(self, local, value):
        if self.dtypes[local] == "i64" and not isinstance(value, int):
            if not math.isfinite(value):
                self.fault(f"non-finite value assigned to integer {local!r}")
            value = int(value)  # truncates toward zero
        elif self.dtypes[local] == "f64":
            value = float(value)
        self.regs[local] = value

    def index(self, array, expr):
        raw = self.eval(expr)
        if not isinstance(raw, int):
            if not math.isfinite(raw) or raw != math.floor(raw):
                self.fault(f"non-integral index into {array!r}")
            raw = int(raw)
        size = len(self.memory[array])
        if not 0 <= raw < size:
            self.fault(f"index out of bounds for {array!r} (size {size})")
        return raw

    def run(self, body):
        for stmt in body:
            self.issued += 1
            if isinstance(stmt, Assign):
                self.put(stmt.local, self.eval(stmt.value))
            elif isinstance(stmt, GlobalLoad):
                self.loads += 1
                i = self.index(stmt.array, stmt.index)
                self.put(stmt.local, float(self.memory[stmt.array][i]))
            elif isinstance(stmt, GlobalStore):
                self.stores += 1
                i = self.index(stmt.array, stmt.index)
                self.memory[stmt.array][i] = float(self.eval(stmt.value))
            elif isinstance(stmt, If):
                self.run(stmt.then if self.eval(stmt.cond) != 0 else stmt.orelse)
            elif isinstance(stmt, While):
                # every evaluation of the condition is one issue
                while self.eval(stmt.cond) != 0:
                    self.run(stmt.body)
                    self.issued += 1
            elif isinstance(stmt, Halt):
                raise _Halted
            else:
                raise KernelError(f"unknown statement {stmt!r}")


def evaluate_expr(expr, cfg: Optional[LaunchConfig] = None, gid: int = 0,
                  registers: Optional[Mapping[str, float]] = None,
                  args: Optional[Mapping[str, float]] = None,
                  stream: Optional[Stream] = None):
    """Value of ``expr`` for one lane.

    ``registers`` maps local names to values (their type follows the Python
    value), ``stream`` supplies ``(rng)`` draws and is advanced in place.
    """
    cfg = cfg or LaunchConfig()
    registers = dict(registers or {})
    locals_ = [Local(name, "i64" if isinstance(v, int) else "f64") for name, v in registers.items()]
    th = _Thread(locals_, cfg, gid, stream, dict(args or {}), {})
    th.regs.update(registers)
    return th.eval(expr)


@dataclass
class ReferenceRun:
    """Per-thread counters from a sequential run."""
    draws: np.ndarray
    issued: np.ndarray
    loads: np.ndarray
    stores: np.ndarray


def run_reference(program: KernelProgram, cfg: LaunchConfig,
                  memory: Dict[str, np.ndarray], seeds=None,
                  args: Optional[Mapping[str, float]] = None) -> ReferenceRun:
    """Run every thread sequentially to completion; mutates ``memory``."""
    args = dict(args or {})
    for name in program.scalar_params:
        if name not in args:
            raise KernelError(f"missing value for scalar parameter {name!r}")
    n = cfg.num_threads
    draws = np.zeros(n, dtype=np.int64)
    issued = np.zeros(n, dtype=np.int64)
    loads = np.zeros(n, dtype=np.int64)
    stores = np.zeros(n, dtype=np.int64)
    for gid in range(cfg.num_threads):
        state: Optional[RngState] = None
        if isinstance(seeds, Mapping):
            state = seeds.get(gid)
        elif seeds is not None and gid < len(seeds):
            state = seeds[gid]
        th = _Thread(program.locals, cfg, gid, None if state is None else Stream(state), args, memory)
        try:
            th.run(program.body)
        except _Halted:
            pass
        draws[gid] = th.draws
        issued[gid] = th.issued
        loads[gid] = th.loads
        stores[gid] = th.stores
    return ReferenceRun(draws, issued, loads, stores)
