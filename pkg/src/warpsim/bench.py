"""Replication sweeps, step detection and CSV output."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .device import DeviceProfile, SimReport, load_profile, simulate
from .models import (
    MODELS, OUTPUTS, MM1Params, PiParams, WalkParams, build_kernel,
    confidence_interval, host_outputs,
)
from .reference import run_reference
from .rng import RngState, random_spacing
from .wlp import ExecutionMode

CSV_HEADER = ("replications", "mode", "model", "total_cycles", "mem_reads", "mem_writes",
              "divergence_events", "waves", "mean", "ci_low", "ci_high")


class SpecError(ValueError):
    """Invalid sweep request."""


class AnalysisError(ValueError):
    """A cost curve that should be monotone is not."""


@dataclass(frozen=True)
class SweepSpec:
    model: str = "pi"
    modes: Tuple[str, ...] = ("wlp",)
    r_min: int = 1
    r_max: int = 1
    r_step: int = 1
    model_params: Dict[str, float] = field(default_factory=dict, hash=False)
    master_seed: int = 1
    profile_path: Optional[str] = None
    tlp_block_size: int = 256
    timing: str = "interval"
    level: float = 0.95

    def __post_init__(self):
        if self.model not in MODELS:
            raise SpecError(f"unknown model {self.model!r}; expected one of {MODELS}")
        object.__setattr__(self, "modes", tuple(self.modes))
        if not self.modes:
            raise SpecError("at least one mode is required")
        for m in self.modes:
            try:
                ExecutionMode.parse(m)
            except ValueError as exc:
                raise SpecError(str(exc)) from None
        if not 1 <= self.r_min <= self.r_max:
            raise SpecError(f"need 1 <= r_min <= r_max, got {self.r_min}..{self.r_max}")
        if self.r_step < 1:
            raise SpecError("r_step must be at least 1")
        if self.tlp_block_size < 1:
            raise SpecError("TLP block size must be positive")
        if not 0 < self.level < 1:
            raise SpecError("confidence level must be in (0, 1)")
        if self.timing not in ("interval", "cycle"):
            raise SpecError(f"unknown timing model {self.timing!r}")
        try:
            self.params_for(1)
        except (TypeError, ValueError) as exc:
            raise SpecError(f"bad model parameters: {exc}") from None

    def params_for(self, replications: int):
        kind = {"pi": PiParams, "mm1": MM1Params, "walk": WalkParams}[self.model]
        return kind(replications=replications, **self.model_params)

    def replication_counts(self) -> List[int]:
        return list(range(self.r_min, self.r_max + 1, self.r_step))

    def profile(self) -> DeviceProfile:
        return load_profile(self.profile_path)


@dataclass(frozen=True)
class SweepRow:
    replications: int
    mode: str
    model: str
    total_cycles: int
    mem_reads: int
    mem_writes: int
    divergence_events: int
    waves: int
    mean: float
    ci_low: float
    ci_high: float


@dataclass
class PointResult:
    """One (model, mode, R) run: the CSV row plus what produced it."""
    row: SweepRow
    outputs: Dict[str, np.ndarray]
    report: Optional[SimReport] = None
    wallclock: float = 0.0


def master_streams(seed: int, n: int) -> List[RngState]:
    return random_spacing(RngState.from_seed(seed), n)


def sequential_unit_cost(model: str, params, streams: Sequence[RngState]):
    """Statements, loads and stores issued by replication 0 on the reference interpreter."""
    plan = build_kernel(model, replace(params, replications=1), ExecutionMode.SEQUENTIAL)
    run = run_reference(plan.program, plan.cfg, plan.allocate(), {0: streams[0]}, plan.args)
    return int(run.issued[0]), int(run.loads[0]), int(run.stores[0])


def summarize(values: np.ndarray, level: float = 0.95) -> Tuple[float, float, float]:
    """(mean, low, high); a single replication gives a zero-width interval."""
    if len(values) == 1:
        v = float(values[0])
        return v, v, v
    ci = confidence_interval(values, level)
    return ci.mean, ci.low, ci.high


def run_point(model: str, params, mode, streams: Sequence[RngState],
              profile: DeviceProfile, tlp_block_size: int = 256, timing: str = "interval",
              level: float = 0.95, host_cache: Optional[dict] = None) -> PointResult:
    mode = ExecutionMode.parse(mode)
    r = params.replications
    start = time.perf_counter()
    if mode is ExecutionMode.SEQUENTIAL:
        cache = host_cache if host_cache is not None else {}
        if "outputs" not in cache or len(next(iter(cache["outputs"].values()))) < r:
            cache["outputs"] = host_outputs(model, params, streams[:r])
        if "unit" not in cache:
            cache["unit"] = sequential_unit_cost(model, params, streams)
        outputs = {k: v[:r].copy() for k, v in cache["outputs"].items()}
        issued, loads, stores = cache["unit"]
        report = None
        cycles, reads, writes, div, waves = r * issued, r * loads, r * stores, 0, 0
    else:
        plan = build_kernel(model, params, mode, profile, tlp_block_size=tlp_block_size)
        memory = plan.allocate()
        report = simulate(plan.program, plan.cfg, profile, memory, plan.seeds(streams),
                          plan.args, timing=timing)
        outputs = {name: memory[name].copy() for name in plan.outputs}
        cycles, reads, writes = report.total_cycles, report.mem_reads, report.mem_writes
        div, waves = report.divergence_events, report.waves_executed
    mean, low, high = summarize(outputs[OUTPUTS[model][0]], level)
    row = SweepRow(r, mode.value, model, int(cycles), int(reads), int(writes), int(div),
                   int(waves), mean, low, high)
    return PointResult(row, outputs, report, time.perf_counter() - start)


def _sweep_worker(args):
    spec, mode, r, streams = args
    profile = spec.profile()
    return run_point(spec.model, spec.params_for(r), mode, streams, profile,
                     spec.tlp_block_size, spec.timing, spec.level)


def run_sweep(spec: SweepSpec, jobs: int = 1, on_point=None) -> List[SweepRow]:
    """Every (mode, R) point of the spec, sorted by (model, mode, R).

    Streams come from one random-spacing split of the master seed sized for
    ``r_max``; since the split is prefix-stable, replication ``i`` sees the
    same stream at every R.
    """
    profile = spec.profile()
    streams = master_streams(spec.master_seed, spec.r_max)
    points = [(ExecutionMode.parse(m), r) for m in spec.modes for r in spec.replication_counts()]
    rows: List[SweepRow] = []
    if jobs > 1:
        work = [(spec, m, r, streams[:r]) for m, r in points
                if m is not ExecutionMode.SEQUENTIAL]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_sweep_worker, work):
                if on_point is not None:
                    on_point(res)
                rows.append(res.row)
        points = [(m, r) for m, r in points if m is ExecutionMode.SEQUENTIAL]
    cache: dict = {}
    if any(m is ExecutionMode.SEQUENTIAL for m, _ in points):
        cache["outputs"] = host_outputs(spec.model, spec.params_for(spec.r_max), streams)
    for mode, r in points:
        res = run_point(spec.model, spec.params_for(r), mode, streams, profile,
                        spec.tlp_block_size, spec.timing, spec.level, cache)
        if on_point is not None:
            on_point(res)
        rows.append(res.row)
    rows.sort(key=lambda row: (row.model, row.mode, row.replications))
    return rows


def curve(rows: Iterable[SweepRow], mode, model: Optional[str] = None) -> List[Tuple[int, int]]:
    mode = ExecutionMode.parse(mode).value
    pts = [(r.replications, r.total_cycles) for r in rows
           if r.mode == mode and (model is None or r.model == model)]
    return sorted(pts)


def detect_steps(points: Sequence[Tuple[int, int]]) -> List[int]:
    """Replication counts where the cost rises over the previous point."""
    steps = []
    for (r0, c0), (r1, c1) in zip(points, points[1:]):
        if r1 <= r0:
            raise AnalysisError(f"curve is not sorted by replications at R={r1}")
        if c1 < c0:
            raise AnalysisError(f"cost drops from {c0} at R={r0} to {c1} at R={r1}")
        if c1 > c0:
            steps.append(r1)
    return steps


def plateau_widths(steps: Sequence[int], start: int = 1) -> List[int]:
    """Lengths of the flat runs ending before each step, the first beginning at ``start``."""
    widths = []
    prev = start
    for s in steps:
        widths.append(s - prev)
        prev = s
    return widths


# -- CSV ------------------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow([_fmt(getattr(row, f.name)) for f in fields(SweepRow)])
    return buf.getvalue()


def emit_csv(rows: Sequence[SweepRow], path) -> None:
    if not rows:
        raise ValueError("nothing to write")
    Path(path).write_text(format_csv(rows))


def parse_csv(text: str) -> List[SweepRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header: {header}")
    rows = []
    for lineno, rec in enumerate(reader, 2):
        if not rec:
            continue
        if len(rec) != len(CSV_HEADER):
            raise ValueError(f"line {lineno}: expected {len(CSV_HEADER)} fields")
        try:
            rows.append(SweepRow(int(rec[0]), rec[1], rec[2], *(int(x) for x in rec[3:8]),
                                 *(float(x) for x in rec[8:])))
        except ValueError:
            raise ValueError(f"line {lineno}: malformed values {rec}") from None
    return rows


def read_csv(path) -> List[SweepRow]:
    return parse_csv(Path(path).read_text())
