"""Exact floating-point accumulation for heavy-tailed running sums.

The streaming engine must reproduce, bit for bit, what a batch
``math.fsum`` over the same prefix returns.  We therefore keep the
running total as a Shewchuk expansion (a short list of non-overlapping
partials whose exact sum equals the exact sum of everything fed in) and
only round once, at query time, via ``math.fsum`` over the partials.
"""

from __future__ import annotations

import math

import numpy as np

# Non-overlapping partials of IEEE doubles never exceed ~40 terms; 128
# leaves generous headroom.
_MAX_PARTIALS = 128


def _grow_partials_py(values, partials, count):
    for v in values:
        x = float(v)
        i = 0
        for j in range(count):
            y = partials[j]
            if abs(x) < abs(y):
                x, y = y, x
            hi = x + y
            lo = y - (hi - x)
            if lo != 0.0:
                partials[i] = lo
                i += 1
            x = hi
        partials[i] = x
        count = i + 1
    return count


try:  # pragma: no cover - exercised indirectly
    from numba import njit

    _grow_partials = njit(cache=True)(_grow_partials_py)
except ImportError:  # pragma: no cover
    _grow_partials = _grow_partials_py


class ExactAccumulator:
    """Streaming sum whose query result equals ``math.fsum`` of the input."""

    def __init__(self) -> None:
        self._partials = np.zeros(_MAX_PARTIALS, dtype=np.float64)
        self._count = 0
        self.n = 0

    def add(self, value: float) -> None:
        self.add_chunk(np.asarray([value], dtype=np.float64))

    def add_chunk(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            return
        if not np.all(np.isfinite(values)):
            raise ValueError("non-finite value fed to ExactAccumulator")
        self._count = int(_grow_partials(values, self._partials, self._count))
        if self._count >= _MAX_PARTIALS - 1:
            raise OverflowError("partials overflow in ExactAccumulator")
        self.n += values.size

    @property
    def partials(self) -> list[float]:
        return [float(p) for p in self._partials[: self._count]]

    @property
    def value(self) -> float:
        return math.fsum(self.partials)

    def value_minus(self, subtracted) -> float:
        """Correctly rounded (running total - sum(subtracted))."""
        return math.fsum(self.partials + [-float(v) for v in subtracted])


def exact_sum(values) -> float:
    """Correctly rounded sum; order-independent by construction."""
    arr = np.asarray(values, dtype=np.float64)
    return math.fsum(arr.tolist())
