"""Combined three-component Tausworthe generator (taus88) and replication streams.

States are immutable values; the functional API (``taus_next``, ``uniform01``,
``exponential``) returns the advanced state alongside each value.  ``Stream``
wraps a state for host-side code that prefers a mutable generator, and
``LaneRng`` holds one state per SIMT lane as parallel ``uint32`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

MASK32 = 0xFFFFFFFF
# smallest admissible value per component; lower seeds leave a component stuck
MIN_COMPONENT = (2, 8, 16)
_SCALE = 1.0 / 4294967296.0
_MAX_SPACING_RETRIES = 1000


def ln(x):
    """Natural log shared by every execution path.

    numpy's log is bit-consistent between scalars and arrays of any length,
    while ``math.log`` differs from it in the last ulp for ~0.3% of inputs.
    Cross-mode bit identity depends on everyone calling this.
    """
    if isinstance(x, np.ndarray):
        return np.log(x)
    return float(np.log(np.float64(x)))


def _remap(value: int, minimum: int) -> int:
    return value | minimum if value < minimum else value


@dataclass(frozen=True)
class RngState:
    """taus88 state.  Out-of-range components are re-mapped, never rejected."""

    s1: int
    s2: int
    s3: int

    def __post_init__(self):
        for name, minimum in zip(("s1", "s2", "s3"), MIN_COMPONENT):
            value = int(getattr(self, name))
            if not 0 <= value <= MASK32:
                raise ValueError(f"{name}={value} is not a 32-bit unsigned value")
            object.__setattr__(self, name, _remap(value, minimum))

    @classmethod
    def from_seed(cls, seed: int) -> "RngState":
        """Expand one integer into three components with a 69069 LCG."""
        x = seed & MASK32
        comps = []
        for _ in range(3):
            x = (69069 * x + 1) & MASK32
            comps.append(x)
        return cls(*comps)

    def as_tuple(self):
        return (self.s1, self.s2, self.s3)


def _step(s1: int, s2: int, s3: int):
    b = (((s1 << 13) & MASK32) ^ s1) >> 19
    s1 = (((s1 & 0xFFFFFFFE) << 12) & MASK32) ^ b
    b = (((s2 << 2) & MASK32) ^ s2) >> 25
    s2 = (((s2 & 0xFFFFFFF8) << 4) & MASK32) ^ b
    b = (((s3 << 3) & MASK32) ^ s3) >> 11
    s3 = (((s3 & 0xFFFFFFF0) << 17) & MASK32) ^ b
    return s1, s2, s3


def taus_next(state: RngState):
    """Advance all three components once; returns ``(u32, new_state)``."""
    s1, s2, s3 = _step(state.s1, state.s2, state.s3)
    return s1 ^ s2 ^ s3, RngState(s1, s2, s3)


def uniform01(state: RngState):
    out, state = taus_next(state)
    return out * _SCALE, state


def exponential_variate(u: float, rate: float) -> float:
    """Inverse-CDF transform ``-ln(1 - u) / rate``."""
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate!r}")
    return -ln(1.0 - u) / rate


def exponential(state: RngState, rate: float):
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate!r}")
    u, state = uniform01(state)
    return exponential_variate(u, rate), state


def split_streams(master: RngState, n: int):
    """Random spacing: seed ``n`` streams from consecutive master draws.

    Each stream takes three fresh 32-bit draws for ``(s1, s2, s3)``.  A
    stream whose re-mapped state collides with an earlier one is redrawn.
    Stream ``i`` depends only on the draws before it, so ``split_streams(m,
    n)[:k] == split_streams(m, k)``.  Returns ``(streams, master_after)``.
    """
    if n < 1:
        raise ValueError("need at least one stream")
    s = master.as_tuple()
    seen = set()
    streams = []
    for _ in range(n):
        for _attempt in range(_MAX_SPACING_RETRIES + 1):
            comps = []
            for _k in range(3):
                s = _step(*s)
                comps.append(s[0] ^ s[1] ^ s[2])
            cand = RngState(*comps)
            if cand not in seen:
                break
        else:
            raise RuntimeError("random spacing exceeded its collision retry budget")
        seen.add(cand)
        streams.append(cand)
    return streams, RngState(*s)


def random_spacing(master: RngState, n: int) -> list:
    return split_streams(master, n)[0]


class Stream:
    """Mutable convenience wrapper used by the host reference models."""

    def __init__(self, state: RngState):
        self.state = state

    def next_u32(self) -> int:
        out, self.state = taus_next(self.state)
        return out

    def uniform(self) -> float:
        return self.next_u32() * _SCALE

    def exponential(self, rate: float) -> float:
        return exponential_variate(self.uniform(), rate)

    def uniforms(self, n: int) -> np.ndarray:
        s1, s2, s3 = self.state.as_tuple()
        out = [0] * n
        for i in range(n):
            b = (((s1 << 13) & MASK32) ^ s1) >> 19
            s1 = (((s1 & 0xFFFFFFFE) << 12) & MASK32) ^ b
            b = (((s2 << 2) & MASK32) ^ s2) >> 25
            s2 = (((s2 & 0xFFFFFFF8) << 4) & MASK32) ^ b
            b = (((s3 << 3) & MASK32) ^ s3) >> 11
            s3 = (((s3 & 0xFFFFFFF0) << 17) & MASK32) ^ b
            out[i] = s1 ^ s2 ^ s3
        self.state = RngState(s1, s2, s3)
        return np.array(out, dtype=np.float64) * _SCALE


class LaneRng:
    """One taus88 state per lane, advanced only for the lanes asked to draw."""

    def __init__(self, states: Sequence[Optional[RngState]]):
        n = len(states)
        self.s1 = np.zeros(n, dtype=np.uint32)
        self.s2 = np.zeros(n, dtype=np.uint32)
        self.s3 = np.zeros(n, dtype=np.uint32)
        self.valid = np.zeros(n, dtype=bool)
        self.draws = np.zeros(n, dtype=np.int64)
        for i, st in enumerate(states):
            if st is not None:
                self.s1[i], self.s2[i], self.s3[i] = st.as_tuple()
                self.valid[i] = True

    @classmethod
    def from_streams(cls, states: Iterable[RngState]) -> "LaneRng":
        return cls(list(states))

    def __len__(self):
        return len(self.valid)

    def next_u32(self, idx=None) -> np.ndarray:
        if idx is None:
            s1, s2, s3 = self.s1, self.s2, self.s3
        else:
            s1, s2, s3 = self.s1[idx], self.s2[idx], self.s3[idx]
        b = ((s1 << 13) ^ s1) >> 19
        s1 = ((s1 & 0xFFFFFFFE) << 12) ^ b
        b = ((s2 << 2) ^ s2) >> 25
        s2 = ((s2 & 0xFFFFFFF8) << 4) ^ b
        b = ((s3 << 3) ^ s3) >> 11
        s3 = ((s3 & 0xFFFFFFF0) << 17) ^ b
        if idx is None:
            self.s1, self.s2, self.s3 = s1, s2, s3
            self.draws += 1
        else:
            self.s1[idx], self.s2[idx], self.s3[idx] = s1, s2, s3
            self.draws[idx] += 1
        return s1 ^ s2 ^ s3

    def uniform(self, idx=None) -> np.ndarray:
        return self.next_u32(idx).astype(np.float64) * _SCALE

    def state(self, lane: int) -> Optional[RngState]:
        if not self.valid[lane]:
            return None
        return RngState(int(self.s1[lane]), int(self.s2[lane]), int(self.s3[lane]))
