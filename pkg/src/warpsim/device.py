"""Device model: profiles, block dispatch, warp scheduling and cycle accounting.

Two timing models are available through ``simulate(..., timing=...)``:

``"interval"`` (default)
    Each warp's critical path is ``alu_issues * aluIssueCycles + mem_ops *
    (aluIssueCycles + memLatencyCycles)``; halts cost nothing.  An SM
    finishes a wave after the longer of its slowest warp and its
    issue-bandwidth bound
    ``ceil(total_issues * aluIssueCycles / warpSchedulersPerSM)``.  Latency
    is hidden perfectly up to the scheduler bandwidth.

``"cycle"``
    Cycle-by-cycle issue: every scheduler picks one ready warp per free
    cycle (oldest first, or youngest first with ``policy="youngest"``); a
    memory statement makes its warp unready for ``memLatencyCycles`` extra
    cycles.  Warps are stepped one statement at a time.

Both produce identical memory contents and transaction counts; only
``total_cycles`` differs.  The interval model makes the wave cost independent
of how many identical warps share an SM, which is what gives exactly flat
plateaus between capacity steps.
"""

from __future__ import annotations

import heapq
import math
import random
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .ir import KernelError, KernelProgram, LaunchConfig
from .lockstep import DEFAULT_MAX_DEPTH, GridExecutor, WarpState, execute_warp_step

# file key -> attribute name
_PROFILE_KEYS = {
    "numSMs": "num_sms",
    "warpSchedulersPerSM": "warp_schedulers_per_sm",
    "maxResidentBlocksPerSM": "max_resident_blocks_per_sm",
    "maxResidentWarpsPerSM": "max_resident_warps_per_sm",
    "deviceResidentBlockCap": "device_resident_block_cap",
    "aluIssueCycles": "alu_issue_cycles",
    "memLatencyCycles": "mem_latency_cycles",
    "maxThreadsPerBlock": "max_threads_per_block",
}
# optional key; when absent the device-wide warp cap equals the block cap
# (clamped to what the SMs can hold)
_OPTIONAL_KEYS = {"deviceResidentWarpCap": "device_resident_warp_cap"}


@dataclass(frozen=True)
class DeviceProfile:
    num_sms: int = 14
    warp_schedulers_per_sm: int = 2
    max_resident_blocks_per_sm: int = 8
    max_resident_warps_per_sm: int = 48
    device_resident_block_cap: int = 64
    alu_issue_cycles: int = 1
    mem_latency_cycles: int = 400
    max_threads_per_block: int = 1024
    device_resident_warp_cap: Optional[int] = None

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None and f.name == "device_resident_warp_cap":
                continue
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{f.name} must be a positive integer, got {value!r}")
        if self.device_resident_block_cap > self.num_sms * self.max_resident_blocks_per_sm:
            raise ValueError("deviceResidentBlockCap exceeds numSMs * maxResidentBlocksPerSM")
        if self.warp_cap > self.num_sms * self.max_resident_warps_per_sm:
            raise ValueError("deviceResidentWarpCap exceeds numSMs * maxResidentWarpsPerSM")

    @property
    def warp_cap(self) -> int:
        """Device-wide limit on warps resident at once."""
        if self.device_resident_warp_cap is None:
            return min(self.device_resident_block_cap,
                       self.num_sms * self.max_resident_warps_per_sm)
        return self.device_resident_warp_cap

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "DeviceProfile":
        known = {**_PROFILE_KEYS, **_OPTIONAL_KEYS}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown profile keys: {sorted(unknown)}")
        missing = set(_PROFILE_KEYS) - set(values)
        if missing:
            raise ValueError(f"missing profile keys: {sorted(missing)}")
        kwargs = {}
        for key, value in values.items():
            try:
                kwargs[known[key]] = int(str(value).strip())
            except ValueError:
                raise ValueError(f"{key}: expected an integer, got {value!r}") from None
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = [f"{key}={getattr(self, attr)}" for key, attr in _PROFILE_KEYS.items()]
        if self.device_resident_warp_cap is not None:
            lines.append(f"deviceResidentWarpCap={self.device_resident_warp_cap}")
        return "\n".join(lines) + "\n"


def parse_profile(text: str) -> DeviceProfile:
    """Parse ``key=value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        key = key.strip()
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return DeviceProfile.from_mapping(values)


def load_profile(path=None) -> DeviceProfile:
    """Load a profile file; with no path, the bundled C2050 profile."""
    if path is None:
        text = resources.files("warpsim").joinpath("data/c2050.profile").read_text()
    else:
        text = Path(path).read_text()
    return parse_profile(text)


C2050 = DeviceProfile()


# -- dispatch -----------------------------------------------------------------

@dataclass(frozen=True)
class DispatchPlan:
    waves: Tuple[Dict[int, int], ...]
    warps_per_block: int = 1

    @property
    def num_blocks(self) -> int:
        return sum(len(w) for w in self.waves)

    def resident_warps(self, wave: int) -> int:
        return len(self.waves[wave]) * self.warps_per_block

    def blocks_on_sm(self, wave: int) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {}
        for block, sm in self.waves[wave].items():
            out.setdefault(sm, []).append(block)
        return out


def plan_dispatch(total_blocks: int, profile: DeviceProfile, warps_per_block: int = 1,
                  sm_seed: Optional[int] = None) -> DispatchPlan:
    """Greedy wave filling with round-robin placement over SMs.

    A wave holds at most ``deviceResidentBlockCap`` blocks and at most the
    device warp cap worth of warps, never exceeding the per-SM block and warp
    limits.  Each wave holds at least one block.  ``sm_seed`` shuffles the SM
    visiting order (fixed for the whole plan) to emulate non-deterministic
    placement.
    """
    if total_blocks < 1:
        raise ValueError("need at least one block")
    if warps_per_block < 1:
        raise ValueError("warps_per_block must be positive")
    order = list(range(profile.num_sms))
    if sm_seed is not None:
        random.Random(sm_seed).shuffle(order)
    per_wave = min(profile.device_resident_block_cap,
                   max(1, profile.warp_cap // warps_per_block))
    waves = []
    next_block = 0
    while next_block < total_blocks:
        want = min(per_wave, total_blocks - next_block)
        blocks = [0] * profile.num_sms
        wave: Dict[int, int] = {}
        cursor = 0
        stalled = 0
        while len(wave) < want and stalled < profile.num_sms:
            sm = order[cursor % profile.num_sms]
            cursor += 1
            fits = (blocks[sm] < profile.max_resident_blocks_per_sm and
                    (blocks[sm] + 1) * warps_per_block <= profile.max_resident_warps_per_sm)
            if fits or not wave:
                wave[next_block] = sm
                blocks[sm] += 1
                next_block += 1
                stalled = 0
            else:
                stalled += 1
        waves.append(wave)
    return DispatchPlan(tuple(waves), warps_per_block)


# -- reports ------------------------------------------------------------------

@dataclass(frozen=True)
class SimReport:
    total_cycles: int
    mem_reads: int
    mem_writes: int
    divergence_events: int
    waves_executed: int
    peak_resident_warps: int
    alu_issues: int
    wave_cycles: Tuple[int, ...] = field(default=(), compare=False)
    halt_issues: int = 0

    @property
    def issued(self) -> int:
        return self.alu_issues + self.mem_reads + self.mem_writes + self.halt_issues


def report_mem_ratio(r: SimReport, profile: DeviceProfile) -> float:
    """Global-memory time over computation time, both in cycles."""
    if r.alu_issues == 0:
        raise ValueError("memory ratio is undefined without ALU issues")
    mem = (r.mem_reads + r.mem_writes) * profile.mem_latency_cycles
    return mem / (r.alu_issues * profile.alu_issue_cycles)


# -- timing -------------------------------------------------------------------

def _interval_wave_cycles(alu, mem, profile: DeviceProfile) -> int:
    """One SM, one wave: slowest warp vs. issue bandwidth."""
    if len(alu) == 0:
        return 0
    a = profile.alu_issue_cycles
    crit = alu * a + mem * (a + profile.mem_latency_cycles)
    bandwidth = -(-int((alu + mem).sum()) * a // profile.warp_schedulers_per_sm)
    return max(int(crit.max()), bandwidth)


def _cycle_wave_cycles(warps: List[WarpState], profile: DeviceProfile, policy: str,
                       sink: list) -> int:
    """Cycle-level issue on one SM; ``warps`` are in age order (oldest first)."""
    a = profile.alu_issue_cycles
    lat = profile.mem_latency_cycles
    sign = 1 if policy == "oldest" else -1
    ready = [(0, sign * i) for i in range(len(warps))]  # (ready time, priority)
    heapq.heapify(ready)
    sched_free = [0] * profile.warp_schedulers_per_sm
    finish = 0
    t = 0
    while ready:
        # earliest cycle with both a ready warp and a free scheduler
        t = max(t, ready[0][0], min(sched_free))
        free = [k for k, f in enumerate(sched_free) if f <= t]
        candidates = []
        while ready and ready[0][0] <= t:
            candidates.append(heapq.heappop(ready))
        candidates.sort(key=lambda entry: entry[1])
        picked = candidates[:len(free)]
        for entry in candidates[len(free):]:
            heapq.heappush(ready, entry)
        for slot, (_, prio) in zip(free, picked):
            w = warps[sign * prio]
            rec = execute_warp_step(w)
            if rec is None:
                continue
            sink.append(rec)
            if rec.kind == "halt":
                # retiring lanes is free: the slot stays available this cycle
                done = t
            else:
                sched_free[slot] = t + a
                done = t + a + (lat if rec.is_memory else 0)
            if w.finished:
                finish = max(finish, done)
            else:
                heapq.heappush(ready, (done, prio))
    return finish


def simulate(program: KernelProgram, cfg: LaunchConfig, profile: DeviceProfile,
             memory: Dict[str, np.ndarray], seeds=None,
             args: Optional[Mapping[str, float]] = None, timing: str = "interval",
             policy: str = "oldest", sm_seed: Optional[int] = None,
             max_depth: int = DEFAULT_MAX_DEPTH) -> SimReport:
    """Run ``program`` over the launch and account for device time.

    ``memory`` maps array parameters to float64 arrays and is updated in
    place.  ``seeds`` gives the RngState of each global thread id (a
    sequence indexed by id, or a mapping); threads without one fault if they
    draw.  ``args`` holds scalar parameter values.
    """
    if cfg.threads_per_block > profile.max_threads_per_block:
        raise KernelError(f"{cfg.threads_per_block} threads per block exceeds the "
                          f"device limit of {profile.max_threads_per_block}")
    if timing not in ("interval", "cycle"):
        raise ValueError(f"unknown timing model {timing!r}")
    if policy not in ("oldest", "youngest"):
        raise ValueError(f"unknown scheduling policy {policy!r}")
    for name in program.array_params:
        if name in memory:
            arr = memory[name]
            if not isinstance(arr, np.ndarray) or arr.dtype != np.float64:
                raise KernelError(f"array {name!r} must be a float64 numpy array")

    wpb = cfg.warps_per_block
    plan = plan_dispatch(cfg.num_blocks, profile, wpb, sm_seed)
    peak = max(plan.resident_warps(k) for k in range(len(plan.waves)))

    if timing == "interval":
        res = GridExecutor(program, cfg, memory, seeds, args, max_depth).run()
        alu, mem = res.alu, res.mem()
        wave_cycles = []
        for k in range(len(plan.waves)):
            worst = 0
            for sm, blocks in plan.blocks_on_sm(k).items():
                ws = np.concatenate([np.arange(b * wpb, (b + 1) * wpb) for b in blocks])
                worst = max(worst, _interval_wave_cycles(alu[ws], mem[ws], profile))
            wave_cycles.append(worst)
        return SimReport(sum(wave_cycles), int(res.loads.sum()), int(res.stores.sum()),
                         int(res.divergence.sum()), len(plan.waves), peak,
                         int(res.alu.sum()), tuple(wave_cycles), int(res.halts.sum()))

    records = []
    wave_cycles = []
    for k in range(len(plan.waves)):
        worst = 0
        for sm, blocks in sorted(plan.blocks_on_sm(k).items()):
            warps = [WarpState(program, cfg, b * wpb + i, memory, seeds, args, max_depth, slot)
                     for slot, (b, i) in enumerate((b, i) for b in blocks for i in range(wpb))]
            worst = max(worst, _cycle_wave_cycles(warps, profile, policy, records))
        wave_cycles.append(worst)
    loads = sum(r.kind == "load" for r in records)
    stores = sum(r.kind == "store" for r in records)
    halts = sum(r.kind == "halt" for r in records)
    return SimReport(sum(wave_cycles), loads, stores, sum(r.divergent for r in records),
                     len(plan.waves), peak, len(records) - loads - stores - halts,
                     tuple(wave_cycles), halts)
