"""Structured kernel IR: expressions, statements, programs and launch geometry."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Tuple, Union


class KernelError(Exception):
    """Malformed program or launch, or an aborted simulation."""


class LaneFault(KernelError):
    """A lane performed an illegal operation (division by zero, bad index...)."""

    def __init__(self, message: str, lane: int = -1):
        super().__init__(message if lane < 0 else f"lane {lane}: {message}")
        self.lane = lane


SPECIAL_REGISTERS = (
    "threadIdx.x", "threadIdx.y", "threadIdx.z",
    "blockIdx.x", "blockIdx.y",
    "blockDim.x", "blockDim.y", "blockDim.z",
    "gridDim.x", "gridDim.y",
    "warpSize",
)

UNARY_OPS = ("neg", "not", "ln", "floor")
BINARY_OPS = ("add", "sub", "mul", "div", "mod",
              "lt", "le", "gt", "ge", "eq", "ne", "and", "or")


# -- expressions ------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: Union[int, float]


@dataclass(frozen=True)
class Var:
    """Reference to a declared local or scalar parameter."""
    name: str


@dataclass(frozen=True)
class Special:
    name: str

    def __post_init__(self):
        if self.name not in SPECIAL_REGISTERS:
            raise KernelError(f"unknown special register {self.name!r}")


@dataclass(frozen=True)
class Unary:
    op: str
    arg: "Expr"

    def __post_init__(self):
        if self.op not in UNARY_OPS:
            raise KernelError(f"unknown unary op {self.op!r}")


@dataclass(frozen=True)
class Binary:
    op: str
    lhs: "Expr"
    rhs: "Expr"

    def __post_init__(self):
        if self.op not in BINARY_OPS:
            raise KernelError(f"unknown binary op {self.op!r}")


@dataclass(frozen=True)
class RngDraw:
    """Uniform draw in [0, 1) from the evaluating lane's stream."""


Expr = Union[Const, Var, Special, Unary, Binary, RngDraw]


# -- statements -------------------------------------------------------------

@dataclass(frozen=True)
class Assign:
    local: str
    value: Expr


@dataclass(frozen=True)
class GlobalLoad:
    local: str
    array: str
    index: Expr


@dataclass(frozen=True)
class GlobalStore:
    array: str
    index: Expr
    value: Expr


@dataclass(frozen=True)
class If:
    cond: Expr
    then: Tuple["Statement", ...] = ()
    orelse: Tuple["Statement", ...] = ()


@dataclass(frozen=True)
class While:
    cond: Expr
    body: Tuple["Statement", ...] = ()


@dataclass(frozen=True)
class Halt:
    pass


Statement = Union[Assign, GlobalLoad, GlobalStore, If, While, Halt]

HALT_ONLY = (Halt(),)


def statement_kind(stmt) -> str:
    return _KINDS[type(stmt)]


_KINDS = {Assign: "assign", GlobalLoad: "load", GlobalStore: "store",
          If: "if", While: "while", Halt: "halt"}


def own_expressions(stmt):
    """Expressions a statement evaluates when issued (not those of nested bodies)."""
    if isinstance(stmt, Assign):
        return (stmt.value,)
    if isinstance(stmt, GlobalLoad):
        return (stmt.index,)
    if isinstance(stmt, GlobalStore):
        return (stmt.index, stmt.value)
    if isinstance(stmt, (If, While)):
        return (stmt.cond,)
    return ()


def count_draws(expr) -> int:
    if isinstance(expr, RngDraw):
        return 1
    if isinstance(expr, Unary):
        return count_draws(expr.arg)
    if isinstance(expr, Binary):
        return count_draws(expr.lhs) + count_draws(expr.rhs)
    return 0


def iter_exprs(expr):
    yield expr
    if isinstance(expr, Unary):
        yield from iter_exprs(expr.arg)
    elif isinstance(expr, Binary):
        yield from iter_exprs(expr.lhs)
        yield from iter_exprs(expr.rhs)


def walk_statements(body):
    for stmt in body:
        yield stmt
        if isinstance(stmt, If):
            yield from walk_statements(stmt.then)
            yield from walk_statements(stmt.orelse)
        elif isinstance(stmt, While):
            yield from walk_statements(stmt.body)


# -- programs ---------------------------------------------------------------

@dataclass(frozen=True)
class Param:
    name: str
    kind: str = "scalar"  # "scalar" | "array"

    def __post_init__(self):
        if self.kind not in ("scalar", "array"):
            raise KernelError(f"param {self.name!r}: kind must be scalar or array")


@dataclass(frozen=True)
class Local:
    name: str
    dtype: str = "f64"  # "f64" | "i64"

    def __post_init__(self):
        if self.dtype not in ("f64", "i64"):
            raise KernelError(f"local {self.name!r}: dtype must be f64 or i64")


@dataclass(frozen=True)
class KernelProgram:
    name: str
    params: Tuple[Param, ...] = ()
    locals: Tuple[Local, ...] = ()
    body: Tuple[Statement, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(self.params))
        object.__setattr__(self, "locals", tuple(self.locals))
        object.__setattr__(self, "body", tuple(self.body))
        self.validate()

    @property
    def scalar_params(self):
        return tuple(p.name for p in self.params if p.kind == "scalar")

    @property
    def array_params(self):
        return tuple(p.name for p in self.params if p.kind == "array")

    def local_dtype(self, name: str) -> str:
        for loc in self.locals:
            if loc.name == name:
                return loc.dtype
        raise KernelError(f"{name!r} is not a declared local")

    def validate(self):
        names = [p.name for p in self.params] + [loc.name for loc in self.locals]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise KernelError(f"duplicate declarations: {sorted(dupes)}")
        locals_ = {loc.name for loc in self.locals}
        scalars = set(self.scalar_params)
        arrays = set(self.array_params)

        def check_expr(expr):
            for node in iter_exprs(expr):
                if isinstance(node, Var) and node.name not in locals_ | scalars:
                    raise KernelError(f"undeclared name {node.name!r} in {self.name}")

        for stmt in walk_statements(self.body):
            for expr in own_expressions(stmt):
                check_expr(expr)
            target = getattr(stmt, "local", None)
            if target is not None and target not in locals_:
                raise KernelError(f"assignment to undeclared local {target!r}")
            array = getattr(stmt, "array", None)
            if array is not None and array not in arrays:
                raise KernelError(f"{array!r} is not an array parameter")

    def with_body(self, body, params=None, locals_=None) -> "KernelProgram":
        return KernelProgram(self.name,
                             self.params if params is None else params,
                             self.locals if locals_ is None else locals_,
                             tuple(body))


# -- launch geometry --------------------------------------------------------

class ThreadCoord(NamedTuple):
    x: int = 0
    y: int = 0
    z: int = 0


class BlockCoord(NamedTuple):
    x: int = 0
    y: int = 0


@dataclass(frozen=True)
class LaunchConfig:
    block_dim: Tuple[int, int, int] = (1, 1, 1)
    grid_dim: Tuple[int, int] = (1, 1)
    warp_size: int = 32
    max_threads_per_block: int = field(default=1024, compare=False)

    def __post_init__(self):
        bd, gd = tuple(self.block_dim), tuple(self.grid_dim)
        if len(bd) != 3 or len(gd) != 2:
            raise KernelError("block_dim needs 3 extents and grid_dim 2")
        if min(bd) < 1 or min(gd) < 1:
            raise KernelError(f"launch extents must be positive: {bd} x {gd}")
        if self.warp_size < 1:
            raise KernelError("warp size must be at least 1")
        object.__setattr__(self, "block_dim", bd)
        object.__setattr__(self, "grid_dim", gd)
        if self.threads_per_block > self.max_threads_per_block:
            raise KernelError(
                f"{self.threads_per_block} threads per block exceeds the "
                f"limit of {self.max_threads_per_block}")

    @property
    def threads_per_block(self) -> int:
        x, y, z = self.block_dim
        return x * y * z

    @property
    def num_blocks(self) -> int:
        return self.grid_dim[0] * self.grid_dim[1]

    @property
    def num_threads(self) -> int:
        return self.threads_per_block * self.num_blocks

    @property
    def warps_per_block(self) -> int:
        return -(-self.threads_per_block // self.warp_size)

    @property
    def num_warps(self) -> int:
        return self.warps_per_block * self.num_blocks


def _check_coords(t: ThreadCoord, b: BlockCoord, cfg: LaunchConfig):
    bx, by, bz = cfg.block_dim
    gx, gy = cfg.grid_dim
    if not (0 <= t.x < bx and 0 <= t.y < by and 0 <= t.z < bz):
        raise ValueError(f"thread {tuple(t)} outside block {cfg.block_dim}")
    if not (0 <= b.x < gx and 0 <= b.y < gy):
        raise ValueError(f"block {tuple(b)} outside grid {cfg.grid_dim}")


def linear_thread_id(t: ThreadCoord, b: BlockCoord, cfg: LaunchConfig) -> int:
    """Global thread number: x fastest, then y, z, block x, block y."""
    _check_coords(t, b, cfg)
    bx, by, bz = cfg.block_dim
    gx = cfg.grid_dim[0]
    return t.x + bx * (t.y + by * (t.z + bz * (b.x + gx * b.y)))


def coords_of(gid: int, cfg: LaunchConfig):
    """Inverse of :func:`linear_thread_id`."""
    bx, by, bz = cfg.block_dim
    tpb = cfg.threads_per_block
    block, intra = divmod(gid, tpb)
    t = ThreadCoord(intra % bx, (intra // bx) % by, intra // (bx * by))
    b = BlockCoord(block % cfg.grid_dim[0], block // cfg.grid_dim[0])
    return t, b
