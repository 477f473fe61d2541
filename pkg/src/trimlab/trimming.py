"""Trimmed, truncated and exceedance-count sum processes.

Batch operations return correctly rounded sums (Shewchuk/fsum), so the
result is independent of summation order and the selection-based path
agrees exactly with a full-sort oracle.  The streaming engine keeps the
running total as an exact expansion and therefore reproduces the batch
results bit for bit whenever its top-K capacity suffices.

Threshold conventions follow the truncation indicators exactly: values
<= l stay in the truncated sum, values > l are counted as exceedances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .summation import ExactAccumulator, exact_sum


@dataclass(frozen=True)
class CheckpointGrid:
    checkpoints: tuple[int, ...]

    def __post_init__(self):
        cps = tuple(int(c) for c in self.checkpoints)
        if not cps or cps[0] < 1 or any(b <= a for a, b in zip(cps, cps[1:])):
            raise ValueError("checkpoints must be strictly increasing and >= 1")
        object.__setattr__(self, "checkpoints", cps)

    def __iter__(self):
        return iter(self.checkpoints)

    def __len__(self):
        return len(self.checkpoints)

    @classmethod
    def geometric(cls, start: int, ratio: float, count: int) -> "CheckpointGrid":
        cps = []
        n = int(start)
        for _ in range(count):
            if not cps or n > cps[-1]:
                cps.append(n)
            n = math.ceil(ratio * n)
        return cls(tuple(cps))


# ---------------------------------------------------------------------------
# batch operations
# ---------------------------------------------------------------------------

def trimmed_sum(values, b: int) -> float:
    """Sum of all values minus the b largest (tie-invariant)."""
    arr = np.asarray(values, dtype=np.float64)
    n = arr.size
    if not 0 <= b <= n:
        raise ValueError(f"trim count b={b} outside [0, {n}]")
    if b == n:
        return 0.0
    if b == 0:
        return exact_sum(arr)
    kept = np.partition(arr, n - b - 1)[: n - b]
    return exact_sum(kept)


def trimmed_sum_sort_oracle(values, b: int) -> float:
    """Full-sort reference for trimmed_sum."""
    arr = np.sort(np.asarray(values, dtype=np.float64))
    n = arr.size
    if not 0 <= b <= n:
        raise ValueError(f"trim count b={b} outside [0, {n}]")
    return exact_sum(arr[: n - b])


def truncated_sum(values, l: float) -> float:
    """Sum of values <= l."""
    if l < 0:
        raise ValueError("threshold must be >= 0")
    arr = np.asarray(values, dtype=np.float64)
    return exact_sum(arr[arr <= l])


def exceedance_count(values, l: float) -> int:
    """#\\{i : v_i > l\\} (strict)."""
    if l < 0:
        raise ValueError("threshold must be >= 0")
    arr = np.asarray(values, dtype=np.float64)
    return int(np.count_nonzero(arr > l))


# ---------------------------------------------------------------------------
# streaming engine
# ---------------------------------------------------------------------------

class TopKTracker:
    """Largest-K container with an exact running total.

    After any prefix the container holds exactly min(count, K) largest
    values of the prefix, and querying the total gives the correctly
    rounded sum of everything seen.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._top = np.empty(0, dtype=np.float64)
        self._acc = ExactAccumulator()

    @property
    def count(self) -> int:
        return self._acc.n

    @property
    def saturated(self) -> bool:
        return self._top.size >= self.capacity

    @property
    def min_tracked(self) -> float:
        return float(self._top.min()) if self._top.size else math.inf

    def update(self, chunk) -> None:
        chunk = np.atleast_1d(np.asarray(chunk, dtype=np.float64))
        if chunk.size == 0:
            return
        self._acc.add_chunk(chunk)
        if self.saturated:
            cand = chunk[chunk > self.min_tracked]
        else:
            cand = chunk
        if cand.size == 0:
            return
        merged = np.concatenate([self._top, cand])
        if merged.size > self.capacity:
            merged = np.partition(merged, merged.size - self.capacity)[
                merged.size - self.capacity:
            ]
        self._top = merged

    def total(self) -> float:
        return self._acc.value

    def largest(self, k: int) -> np.ndarray:
        if k > self._top.size:
            raise ValueError(f"requested {k} largest but only {self._top.size} tracked")
        if k == 0:
            return np.empty(0, dtype=np.float64)
        return np.partition(self._top, self._top.size - k)[self._top.size - k:]

    def above(self, l: float) -> np.ndarray:
        return self._top[self._top > l]

    def total_minus(self, subtracted) -> float:
        return self._acc.value_minus(subtracted)


@dataclass(frozen=True)
class CheckpointRecord:
    n: int
    total: float
    trimmed: float
    truncated: float
    exceed_count: int
    b: int
    f: float
    flag: str = ""  # "" or "capacity-insufficient"


def default_capacity(max_b: int, slack_scale: float = 4.0) -> int:
    k0 = max(int(max_b), 1)
    return k0 + int(slack_scale * math.sqrt(k0)) + 8


def _chunks(stream, checkpoints: Sequence[int]) -> Iterator[np.ndarray]:
    """Re-chunk an iterable of floats/arrays, splitting at checkpoints."""
    bounds = list(checkpoints)
    seen = 0
    buf: list[float] = []

    def arrays():
        for item in stream:
            arr = np.atleast_1d(np.asarray(item, dtype=np.float64))
            if arr.size:
                yield arr

    for arr in arrays():
        start = 0
        while start < arr.size:
            next_bound = None
            for b in bounds:
                if b > seen:
                    next_bound = b
                    break
            take = arr.size - start
            if next_bound is not None:
                take = min(take, next_bound - seen)
            piece = arr[start: start + take]
            yield piece
            seen += take
            start += take
    _ = buf


def streaming_profile(
    stream: Iterable,
    grid: CheckpointGrid,
    b_schedule: Sequence[int],
    f_schedule: Sequence[float],
    capacity: int | None = None,
) -> list[CheckpointRecord]:
    """Single pass over a value stream, emitting one record per checkpoint.

    Records flagged "capacity-insufficient" are computed from whatever
    the tracker holds and must not be trusted; callers may re-run with a
    larger capacity (two-pass fallback).
    """
    cps = list(grid)
    if len(b_schedule) != len(cps) or len(f_schedule) != len(cps):
        raise ValueError("b/f schedules must align with the checkpoint grid")
    b_schedule = [int(b) for b in b_schedule]
    if any(b < 0 for b in b_schedule):
        raise ValueError("trim counts must be >= 0")
    if capacity is None:
        capacity = default_capacity(max(b_schedule, default=1))
    tracker = TopKTracker(capacity)

    records: list[CheckpointRecord] = []
    idx = 0
    for piece in _chunks(stream, cps):
        tracker.update(piece)
        while idx < len(cps) and tracker.count == cps[idx]:
            n, b, f = cps[idx], b_schedule[idx], f_schedule[idx]
            flag = ""
            if b > min(n, capacity):
                flag = "capacity-insufficient"
                b_eff = min(b, tracker._top.size)
            else:
                b_eff = b
            top_b = tracker.largest(b_eff)
            above = tracker.above(f)
            if tracker.saturated and f < tracker.min_tracked:
                flag = "capacity-insufficient"
            records.append(
                CheckpointRecord(
                    n=n,
                    total=tracker.total(),
                    trimmed=tracker.total_minus(top_b),
                    truncated=tracker.total_minus(above),
                    exceed_count=int(above.size),
                    b=b,
                    f=float(f),
                    flag=flag,
                )
            )
            idx += 1
    if idx != len(cps):
        raise ValueError("stream ended before the last checkpoint")
    return records


def batch_profile(
    values,
    grid: CheckpointGrid,
    b_schedule: Sequence[int],
    f_schedule: Sequence[float],
) -> list[CheckpointRecord]:
    """Reference recomputation of streaming_profile on a stored array."""
    arr = np.asarray(values, dtype=np.float64)
    records = []
    for n, b, f in zip(grid, b_schedule, f_schedule):
        prefix = arr[:n]
        records.append(
            CheckpointRecord(
                n=int(n),
                total=exact_sum(prefix),
                trimmed=trimmed_sum(prefix, int(b)),
                truncated=truncated_sum(prefix, float(f)) if math.isfinite(f)
                else exact_sum(prefix),
                exceed_count=exceedance_count(prefix, float(f)) if math.isfinite(f)
                else 0,
                b=int(b),
                f=float(f),
            )
        )
    return records
