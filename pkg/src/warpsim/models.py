"""Benchmark models: Monte Carlo pi, M/M/1 queue, 2D random walk.

Each model exists three times:

* a scalar host function (``pi_replication`` ...) taking any object with
  ``uniform()`` / ``exponential(rate)`` methods, used as the sequential path;
* a batch function over many streams at once (numpy, one lane per
  replication), used for large statistical runs;
* a kernel-IR body (``model_body``) that reads its replication id from
  ``rid`` and writes results to ``array[rid]``.

All three perform the same floating-point operations in the same order, so
their per-replication results are bit-identical for the same stream.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .ir import (
    Assign, Binary, Const, GlobalLoad, GlobalStore, If, KernelError, KernelProgram,
    LaunchConfig, Local, Param, RngDraw, Unary, Var, While,
)
from .rng import LaneRng, RngState, Stream, ln
from .wlp import ExecutionMode, lane_seeds, plan_launch, wrap_tlp, wrap_wlp

MODELS = ("pi", "mm1", "walk")
# walk directions for floor(4u): east, west, north, south
DIRECTIONS = ((1, 0), (-1, 0), (0, 1), (0, -1))


@dataclass(frozen=True)
class PiParams:
    draws: int = 1000
    replications: int = 1

    def __post_init__(self):
        if self.draws < 1:
            raise ValueError("draws must be at least 1")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")


@dataclass(frozen=True)
class MM1Params:
    clients: int = 1000
    arrival_rate: float = 0.5
    service_rate: float = 1.0
    replications: int = 1

    def __post_init__(self):
        if self.clients < 1:
            raise ValueError("clients must be at least 1")
        if not (self.arrival_rate > 0 and self.service_rate > 0):
            raise ValueError("arrival and service rates must be positive")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")
        if self.arrival_rate >= self.service_rate:
            warnings.warn(f"arrival rate {self.arrival_rate} >= service rate "
                          f"{self.service_rate}: the queue has no steady state")


@dataclass(frozen=True)
class MM1Result:
    avg_idle: float
    avg_wait_queue: float
    avg_system: float


@dataclass(frozen=True)
class WalkParams:
    steps: int = 1000
    chunks: int = 30
    replications: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be at least 1")
        if self.chunks < 2:
            raise ValueError("chunks must be at least 2")
        if self.replications < 1:
            raise ValueError("replications must be at least 1")


# -- host replications --------------------------------------------------------

def pi_replication(draws: int, rng) -> float:
    if draws < 1:
        raise ValueError("draws must be at least 1")
    count = 0
    for _ in range(draws):
        x = rng.uniform()
        y = rng.uniform()
        count += x * x + y * y <= 1.0
    return 4.0 * count / draws


def mm1_replication(p: MM1Params, rng) -> MM1Result:
    """Lindley recursion over ``p.clients`` customers.

    Draw order is A1, S1, A2, S2, ... (inter-arrival, then service).  The
    server idles before the first arrival and whenever the next customer
    arrives after the current one departs.
    """
    lam, mu = p.arrival_rate, p.service_rate
    a = rng.exponential(lam)
    idle = a
    s = rng.exponential(mu)
    w = 0.0
    sum_w = 0.0
    sum_sys = s
    for _ in range(1, p.clients):
        a = rng.exponential(lam)
        t = (w + s) - a
        if t > 0:
            w = t
        else:
            w = 0.0
            idle = idle - t
        s = rng.exponential(mu)
        sum_w = sum_w + w
        sum_sys = sum_sys + (w + s)
    n = p.clients
    return MM1Result(idle / n, sum_w / n, sum_sys / n)


def walk_replication(p: WalkParams, rng) -> int:
    """Final chunk ``((x mod chunks) + chunks) mod chunks`` of a lattice walk.

    Each step takes two draws: the first picks the direction via
    ``floor(4u)``, the second is discarded.
    """
    x = y = 0
    for _ in range(p.steps):
        d = int(math.floor(4.0 * rng.uniform()))
        rng.uniform()
        dx, dy = DIRECTIONS[d]
        x += dx
        y += dy
    return int(math.fmod(math.fmod(x, p.chunks) + p.chunks, p.chunks))


# -- batch (one numpy lane per replication) -----------------------------------

# below this many streams, per-stream generation beats per-lane stepping
_FEW_STREAMS = 16


def pi_batch(draws: int, streams: Sequence[RngState]) -> np.ndarray:
    if draws < 1:
        raise ValueError("draws must be at least 1")
    if len(streams) < _FEW_STREAMS:
        # few long streams: draw each one's sequence in a single tight loop
        out = []
        for s in streams:
            u = Stream(s).uniforms(2 * draws)
            x, y = u[0::2], u[1::2]
            out.append(4.0 * int((x * x + y * y <= 1.0).sum()) / draws)
        return np.array(out)
    rng = LaneRng(list(streams))
    count = np.zeros(len(streams), dtype=np.int64)
    for _ in range(draws):
        x = rng.uniform()
        y = rng.uniform()
        count += x * x + y * y <= 1.0
    return 4.0 * count / draws


def mm1_batch(p: MM1Params, streams: Sequence[RngState]) -> Dict[str, np.ndarray]:
    rng = LaneRng(list(streams))
    lam, mu = p.arrival_rate, p.service_rate

    def expo(rate):
        return -ln(1.0 - rng.uniform()) / rate

    a = expo(lam)
    idle = a.copy()
    s = expo(mu)
    w = np.zeros(len(streams))
    sum_w = np.zeros(len(streams))
    sum_sys = s.copy()
    for _ in range(1, p.clients):
        a = expo(lam)
        t = (w + s) - a
        busy = t > 0
        w = np.where(busy, t, 0.0)
        idle = np.where(busy, idle, idle - t)
        s = expo(mu)
        sum_w = sum_w + w
        sum_sys = sum_sys + (w + s)
    n = p.clients
    return {"avg_idle": idle / n, "avg_wait_queue": sum_w / n, "avg_system": sum_sys / n}


def walk_batch(p: WalkParams, streams: Sequence[RngState]) -> np.ndarray:
    rng = LaneRng(list(streams))
    x = np.zeros(len(streams), dtype=np.int64)
    dx = np.array([d[0] for d in DIRECTIONS], dtype=np.int64)
    for _ in range(p.steps):
        d = np.floor(4.0 * rng.uniform()).astype(np.int64)
        rng.uniform()
        x += dx[d]
    return np.fmod(np.fmod(x, p.chunks) + p.chunks, p.chunks).astype(np.int64)


# -- statistics ---------------------------------------------------------------

@dataclass(frozen=True)
class ConfidenceInterval:
    mean: float
    half_width: float
    level: float
    n: int
    small_sample: bool = False

    @property
    def low(self) -> float:
        return self.mean - self.half_width

    @property
    def high(self) -> float:
        return self.mean + self.half_width

    def contains(self, value: float) -> bool:
        return self.low <= value <= self.high


MIN_GAUSSIAN_SAMPLES = 30


def confidence_interval(samples, level: float = 0.95) -> ConfidenceInterval:
    """Normal-approximation interval; ``small_sample`` is set when n < 30."""
    data = np.asarray(samples, dtype=np.float64).ravel()
    n = data.size
    if n < 2:
        raise ValueError("a confidence interval needs at least 2 samples")
    if not 0 < level < 1:
        raise ValueError("level must be in (0, 1)")
    z = NormalDist().inv_cdf(0.5 + level / 2)
    mean = float(data.mean())
    sd = float(data.std(ddof=1))
    return ConfidenceInterval(mean, z * sd / math.sqrt(n), level, n,
                              n < MIN_GAUSSIAN_SAMPLES)


def chi_square_uniform(values, categories: int) -> float:
    """Pearson statistic of integer values in ``[0, categories)`` vs. uniform."""
    counts = np.bincount(np.asarray(values, dtype=np.int64), minlength=categories)
    if counts.size != categories:
        raise ValueError("values outside [0, categories)")
    expected = counts.sum() / categories
    return float(((counts - expected) ** 2).sum() / expected)


# -- kernel bodies --------------------------------------------------------------

def _v(name):
    return Var(name)


def _c(value):
    return Const(value)


def _b(op, a, b):
    return Binary(op, a, b)


def _exp_draw(rate_param):
    return _b("div", Unary("neg", Unary("ln", _b("sub", _c(1.0), RngDraw()))), _v(rate_param))


RID = _v("rid")


def pi_body() -> KernelProgram:
    inside = _b("le", _b("add", _b("mul", _v("x"), _v("x")), _b("mul", _v("y"), _v("y"))),
                _c(1.0))
    return KernelProgram(
        "pi",
        (Param("draws"), Param("hits", "array"), Param("out", "array")),
        (Local("rid", "i64"), Local("i", "i64"), Local("count", "i64"),
         Local("x"), Local("y")),
        (
            Assign("i", _c(0)),
            Assign("count", _c(0)),
            While(_b("lt", _v("i"), _v("draws")), (
                Assign("x", RngDraw()),
                Assign("y", RngDraw()),
                Assign("count", _b("add", _v("count"), inside)),
                GlobalStore("hits", RID, _v("count")),
                Assign("i", _b("add", _v("i"), _c(1))),
            )),
            GlobalStore("out", RID, _b("div", _b("mul", _c(4.0), _v("count")), _v("draws"))),
        ),
    )


def mm1_body() -> KernelProgram:
    return KernelProgram(
        "mm1",
        (Param("clients"), Param("lam"), Param("mu"), Param("wait", "array"),
         Param("wq", "array"), Param("sys", "array"), Param("idle_out", "array")),
        (Local("rid", "i64"), Local("n", "i64"), Local("a"), Local("s"), Local("w"),
         Local("t"), Local("idle"), Local("sumw"), Local("sumsys")),
        (
            Assign("a", _exp_draw("lam")),
            Assign("idle", _v("a")),
            Assign("s", _exp_draw("mu")),
            Assign("w", _c(0.0)),
            Assign("sumw", _c(0.0)),
            Assign("sumsys", _v("s")),
            Assign("n", _c(1)),
            While(_b("lt", _v("n"), _v("clients")), (
                Assign("a", _exp_draw("lam")),
                Assign("t", _b("sub", _b("add", _v("w"), _v("s")), _v("a"))),
                If(_b("gt", _v("t"), _c(0)),
                   (Assign("w", _v("t")),),
                   (Assign("w", _c(0.0)), Assign("idle", _b("sub", _v("idle"), _v("t"))))),
                Assign("s", _exp_draw("mu")),
                Assign("sumw", _b("add", _v("sumw"), _v("w"))),
                Assign("sumsys", _b("add", _v("sumsys"), _b("add", _v("w"), _v("s")))),
                GlobalStore("wait", RID, _v("w")),
                Assign("n", _b("add", _v("n"), _c(1))),
            )),
            GlobalStore("wq", RID, _b("div", _v("sumw"), _v("clients"))),
            GlobalStore("sys", RID, _b("div", _v("sumsys"), _v("clients"))),
            GlobalStore("idle_out", RID, _b("div", _v("idle"), _v("clients"))),
        ),
    )


def walk_body() -> KernelProgram:
    """Walker position lives in global memory (``posx``/``posy``, zeroed)."""
    def move(array, delta):
        return (GlobalLoad("p", array, RID),
                GlobalStore(array, RID, _b("add", _v("p"), _c(delta))))

    d = _v("d")
    chain = If(_b("eq", d, _c(0)), move("posx", 1.0), (
        If(_b("eq", d, _c(1)), move("posx", -1.0), (
            If(_b("eq", d, _c(2)), move("posy", 1.0), move("posy", -1.0)),
        )),
    ))
    chunk = _b("mod", _b("add", _b("mod", _v("p"), _v("chunks")), _v("chunks")), _v("chunks"))
    return KernelProgram(
        "walk",
        (Param("steps"), Param("chunks"), Param("posx", "array"), Param("posy", "array"),
         Param("out", "array")),
        (Local("rid", "i64"), Local("k", "i64"), Local("d", "i64"), Local("u"),
         Local("skip"), Local("p")),
        (
            Assign("k", _c(0)),
            While(_b("lt", _v("k"), _v("steps")), (
                Assign("u", RngDraw()),
                Assign("skip", RngDraw()),
                Assign("d", Unary("floor", _b("mul", _c(4.0), _v("u")))),
                chain,
                Assign("k", _b("add", _v("k"), _c(1))),
            )),
            GlobalLoad("p", "posx", RID),
            GlobalStore("out", RID, chunk),
        ),
    )


_BODIES = {"pi": pi_body, "mm1": mm1_body, "walk": walk_body}
# model -> (output array holding the headline per-replication result, all outputs)
OUTPUTS = {
    "pi": ("out", ("out",)),
    "mm1": ("sys", ("wq", "sys", "idle_out")),
    "walk": ("out", ("out",)),
}
SCRATCH = {"pi": ("hits",), "mm1": ("wait",), "walk": ("posx", "posy")}


def model_body(model: str) -> KernelProgram:
    try:
        return _BODIES[model]()
    except KeyError:
        raise KernelError(f"unknown model {model!r}; expected one of {MODELS}") from None


def default_params(model: str, replications: int = 1):
    if model == "pi":
        return PiParams(replications=replications)
    if model == "mm1":
        return MM1Params(replications=replications)
    if model == "walk":
        return WalkParams(replications=replications)
    raise KernelError(f"unknown model {model!r}; expected one of {MODELS}")


def kernel_args(model: str, params) -> Dict[str, float]:
    if model == "pi":
        return {"draws": int(params.draws)}
    if model == "mm1":
        return {"clients": int(params.clients), "lam": float(params.arrival_rate),
                "mu": float(params.service_rate)}
    if model == "walk":
        return {"steps": int(params.steps), "chunks": int(params.chunks)}
    raise KernelError(f"unknown model {model!r}; expected one of {MODELS}")


@dataclass
class KernelPlan:
    """Everything needed to run one model at one replication count."""
    model: str
    mode: ExecutionMode
    program: KernelProgram
    cfg: LaunchConfig
    args: Dict[str, float]
    arrays: Dict[str, int]
    result_array: str
    outputs: Tuple[str, ...]
    replications: int

    def allocate(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros(size, dtype=np.float64) for name, size in self.arrays.items()}

    def seeds(self, streams: Sequence[RngState]):
        if len(streams) < self.replications:
            raise ValueError(f"need {self.replications} streams, got {len(streams)}")
        return lane_seeds(list(streams[:self.replications]), self.cfg, self.mode)


def build_kernel(model: str, params, mode, profile=None, warp_size: int = 32,
                 tlp_block_size: int = 256) -> KernelPlan:
    """Wrap the model body for ``mode`` and plan its launch.

    For ``SEQUENTIAL`` the program is the unwrapped body with ``rid`` left at
    zero, on a one-thread launch; it is what the unit-cost accounting runs,
    while results come from the host functions.
    """
    mode = ExecutionMode.parse(mode)
    body = model_body(model)
    r = params.replications
    cfg = plan_launch(r, mode, profile, warp_size, tlp_block_size)
    args = kernel_args(model, params)
    if mode is ExecutionMode.WLP:
        program = wrap_wlp(body)
    elif mode is ExecutionMode.TLP:
        program = wrap_tlp(body)
        args["replications"] = r
    else:
        program = body
    result, outputs = OUTPUTS[model]
    names = outputs + SCRATCH[model]
    size = 1 if mode is ExecutionMode.SEQUENTIAL else r
    return KernelPlan(model, mode, program, cfg, args, {n: size for n in names},
                      result, outputs, r)


def host_outputs(model: str, params, streams: Sequence[RngState]) -> Dict[str, np.ndarray]:
    """Per-replication outputs from the scalar host functions, keyed like the arrays."""
    r = params.replications
    if model == "pi":
        return {"out": np.array([pi_replication(params.draws, Stream(s)) for s in streams[:r]])}
    if model == "mm1":
        res = [mm1_replication(params, Stream(s)) for s in streams[:r]]
        return {"wq": np.array([x.avg_wait_queue for x in res]),
                "sys": np.array([x.avg_system for x in res]),
                "idle_out": np.array([x.avg_idle for x in res])}
    if model == "walk":
        return {"out": np.array([float(walk_replication(params, Stream(s))) for s in streams[:r]])}
    raise KernelError(f"unknown model {model!r}; expected one of {MODELS}")


def batch_outputs(model: str, params, streams: Sequence[RngState]) -> Dict[str, np.ndarray]:
    """Same as :func:`host_outputs`, vectorized across replications."""
    streams = list(streams[:params.replications])
    if model == "pi":
        return {"out": pi_batch(params.draws, streams)}
    if model == "mm1":
        res = mm1_batch(params, streams)
        return {"wq": res["avg_wait_queue"], "sys": res["avg_system"],
                "idle_out": res["avg_idle"]}
    if model == "walk":
        return {"out": walk_batch(params, streams).astype(np.float64)}
    raise KernelError(f"unknown model {model!r}; expected one of {MODELS}")
