"""Warp-level parallelism: warp ids, leader guards, launch planning, wrapping.

A WLP kernel runs one replication per warp: every lane computes its warp
index into ``rid`` once at entry, then every lane except the warp leader
halts.  A TLP kernel runs one replication per thread and halts the tail
threads whose id is past the replication count.
"""

from __future__ import annotations

import enum
import warnings
from typing import Dict, Optional, Sequence

from .ir import (
    HALT_ONLY, Assign, Binary, BlockCoord, Const, If, KernelError, KernelProgram,
    LaunchConfig, Local, Param, Special, ThreadCoord, Var, linear_thread_id,
    walk_statements,
)
from .rng import RngState

RID = "rid"
REPLICATIONS = "replications"
DEFAULT_TLP_BLOCK_SIZE = 256
DEFAULT_GRID_LIMIT = 65535


class ExecutionMode(enum.Enum):
    WLP = "wlp"
    TLP = "tlp"
    SEQUENTIAL = "sequential"

    @classmethod
    def parse(cls, value) -> "ExecutionMode":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown execution mode {value!r}") from None


def warp_index(t: ThreadCoord, b: BlockCoord, cfg: LaunchConfig) -> int:
    return linear_thread_id(t, b, cfg) // cfg.warp_size


def is_warp_leader(t: ThreadCoord, cfg: LaunchConfig) -> bool:
    bx, by, bz = cfg.block_dim
    if not (0 <= t.x < bx and 0 <= t.y < by and 0 <= t.z < bz):
        raise ValueError(f"thread {tuple(t)} outside block {cfg.block_dim}")
    return (t.x + bx * (t.y + by * t.z)) % cfg.warp_size == 0


def plan_launch(replications: int, mode, profile=None, warp_size: int = 32,
                tlp_block_size: int = DEFAULT_TLP_BLOCK_SIZE,
                grid_limit: int = DEFAULT_GRID_LIMIT) -> LaunchConfig:
    mode = ExecutionMode.parse(mode)
    if replications < 1:
        raise ValueError("replications must be at least 1")
    if tlp_block_size < 1:
        raise ValueError("TLP block size must be positive")
    max_tpb = 1024 if profile is None else profile.max_threads_per_block
    if mode is ExecutionMode.SEQUENTIAL:
        return LaunchConfig((1, 1, 1), (1, 1), warp_size, max_tpb)
    if mode is ExecutionMode.WLP:
        block, grid = warp_size, replications
    else:
        block = min(replications, tlp_block_size)
        grid = -(-replications // block)
    if grid > grid_limit:
        raise ValueError(f"{replications} replications need a grid of {grid} blocks, "
                         f"over the limit of {grid_limit}")
    return LaunchConfig((block, 1, 1), (grid, 1), warp_size, max_tpb)


# -- kernel wrapping ------------------------------------------------------------

def _sp(name):
    return Special(name)


def _add(a, b):
    return Binary("add", a, b)


def _mul(a, b):
    return Binary("mul", a, b)


def intra_block_id_expr():
    """threadIdx.x + blockDim.x * (threadIdx.y + blockDim.y * threadIdx.z)"""
    return _add(_sp("threadIdx.x"), _mul(_sp("blockDim.x"), _add(
        _sp("threadIdx.y"), _mul(_sp("blockDim.y"), _sp("threadIdx.z")))))


def linear_id_expr():
    inner = _add(_sp("threadIdx.z"), _mul(_sp("blockDim.z"), _add(
        _sp("blockIdx.x"), _mul(_sp("gridDim.x"), _sp("blockIdx.y")))))
    return _add(_sp("threadIdx.x"), _mul(_sp("blockDim.x"), _add(
        _sp("threadIdx.y"), _mul(_sp("blockDim.y"), inner))))


def warp_index_expr():
    return Binary("div", linear_id_expr(), _sp("warpSize"))


NOT_LEADER = Binary("ne", Binary("mod", intra_block_id_expr(), _sp("warpSize")), Const(0))
PAST_END = Binary("ge", Var(RID), Var(REPLICATIONS))
LEADER_GUARD = If(NOT_LEADER, HALT_ONLY)
TAIL_GUARD = If(PAST_END, HALT_ONLY)


def is_wrapped(program: KernelProgram) -> bool:
    return any(stmt in (LEADER_GUARD, TAIL_GUARD) for stmt in walk_statements(program.body))


def _with_rid(program: KernelProgram):
    for p in program.params:
        if p.name == RID:
            raise KernelError(f"{RID!r} must be a local, not a parameter")
    for loc in program.locals:
        if loc.name == RID:
            if loc.dtype != "i64":
                raise KernelError(f"{RID!r} must be an i64 local")
            return program.locals
    return (Local(RID, "i64"),) + program.locals


def wrap_wlp(program: KernelProgram) -> KernelProgram:
    """One replication per warp: ``rid = warpIdx``; non-leader lanes halt."""
    if is_wrapped(program):
        raise KernelError(f"{program.name} is already wrapped")
    locals_ = _with_rid(program)
    body = (Assign(RID, warp_index_expr()), LEADER_GUARD) + program.body
    return program.with_body(body, locals_=locals_)


def wrap_tlp(program: KernelProgram) -> KernelProgram:
    """One replication per thread; threads past ``replications`` halt."""
    if is_wrapped(program):
        raise KernelError(f"{program.name} is already wrapped")
    if any(p.name == REPLICATIONS for p in program.params):
        raise KernelError(f"{REPLICATIONS!r} is reserved for the TLP bound")
    locals_ = _with_rid(program)
    params = program.params + (Param(REPLICATIONS, "scalar"),)
    body = (Assign(RID, linear_id_expr()), TAIL_GUARD) + program.body
    return program.with_body(body, params=params, locals_=locals_)


def lane_seeds(streams: Sequence[RngState], cfg: LaunchConfig, mode) -> Dict[int, RngState]:
    """Attach replication streams to the global thread ids that will use them."""
    mode = ExecutionMode.parse(mode)
    r = len(streams)
    if mode is ExecutionMode.TLP:
        return {g: streams[g] for g in range(min(r, cfg.num_threads))}
    if mode is ExecutionMode.SEQUENTIAL:
        return {0: streams[0]} if r else {}
    check_wlp_geometry(cfg)
    tpb, ws = cfg.threads_per_block, cfg.warp_size
    out = {}
    for block in range(cfg.num_blocks):
        for intra in range(0, tpb, ws):
            gid = block * tpb + intra
            rid = gid // ws
            if rid < r:
                out[gid] = streams[rid]
    return out


def check_wlp_geometry(cfg: LaunchConfig) -> bool:
    """Warn when blocks are not whole warps; warpIdx then differs from hardware packing."""
    if cfg.threads_per_block % cfg.warp_size:
        warnings.warn(f"block of {cfg.threads_per_block} threads is not a multiple of "
                      f"warpSize={cfg.warp_size}; warp indices follow the global linear id "
                      f"and may not match hardware warps", stacklevel=3)
        return False
    return True


def replication_count(cfg: LaunchConfig, mode) -> int:
    """Replications a launch can hold in the given mode."""
    mode = ExecutionMode.parse(mode)
    if mode is ExecutionMode.WLP:
        return cfg.num_warps
    if mode is ExecutionMode.TLP:
        return cfg.num_threads
    return 1
