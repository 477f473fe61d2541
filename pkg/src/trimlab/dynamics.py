"""Interval maps, exact orbit generation, continued-fraction digit
streams, invariant-measure sampling and observable validation.

Long doubling-map orbits are generated from the random bit stream
directly (the float iteration collapses to 0 after ~53 steps), and long
Gauss-map digit streams come from exact homographic extraction on a
lazy bit stream.  Both are bit-reproducible from a 64-bit seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import NonTerminatingStreamError, NoSamplerError, UndefinedPointError
from .regvar import CONSTANT_ONE, TailModel

LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# maps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Branch:
    lo: float
    hi: float
    forward: Callable[[float], float]
    derivative: Callable[[float], float]
    inverse: Callable[[float], float]


@dataclass(frozen=True)
class IntervalMap:
    """Piecewise expanding map of [0,1] with inverse branches.

    The Gauss map has countably many branches; they are materialized on
    demand via gauss_branch(m) and flagged with kind == "gauss".
    """

    kind: str  # "doubling" | "gauss" | "identity" | "custom"
    branches: tuple[Branch, ...]
    expansion_bound: float
    mixing: bool = True
    invariant_density: Callable[[np.ndarray], np.ndarray] | None = None
    invariant_cdf_inverse: Callable[[float], float] | None = None

    def step(self, x: float) -> float:
        if not 0.0 <= x <= 1.0:
            raise ValueError(f"x={x} outside [0, 1]")
        if self.kind == "gauss":
            if x == 0.0:
                raise UndefinedPointError("Gauss map undefined at x=0")
            y = 1.0 / x
            return y - math.floor(y)
        if self.kind == "doubling":
            y = 2.0 * x
            return y - math.floor(y) if y != 2.0 else 0.0
        for b in self.branches:
            if b.lo <= x <= b.hi:
                return min(max(b.forward(x), 0.0), 1.0)
        raise UndefinedPointError(f"x={x} not in any branch domain")

    def check_expansion(self, grid_points: int = 1024) -> float:
        """Smallest |T'| over a sampled grid; must exceed the bound."""
        lo_seen = math.inf
        branches = self.branches if self.kind != "gauss" else tuple(
            gauss_branch(m) for m in range(1, 32)
        )
        for b in branches:
            xs = np.linspace(b.lo, b.hi, grid_points)[1:-1]
            if xs.size:
                lo_seen = min(lo_seen, float(np.min(np.abs([b.derivative(x) for x in xs]))))
        return lo_seen


def doubling_map() -> IntervalMap:
    branches = (
        Branch(0.0, 0.5, lambda x: 2 * x, lambda x: 2.0, lambda y: y / 2),
        Branch(0.5, 1.0, lambda x: 2 * x - 1, lambda x: 2.0, lambda y: (y + 1) / 2),
    )
    return IntervalMap(
        kind="doubling",
        branches=branches,
        expansion_bound=2.0,
        invariant_density=lambda x: np.ones_like(np.asarray(x, dtype=float)),
        invariant_cdf_inverse=lambda u: u,
    )


def gauss_branch(m: int) -> Branch:
    return Branch(
        1.0 / (m + 1),
        1.0 / m,
        lambda x: 1.0 / x - m,
        lambda x: -1.0 / x**2,
        lambda y: 1.0 / (y + m),
    )


def gauss_map() -> IntervalMap:
    return IntervalMap(
        kind="gauss",
        branches=(),
        expansion_bound=1.0,  # |T'| > 1 a.e.; uniform bound holds for T^2
        invariant_density=lambda x: 1.0 / (LOG2 * (1.0 + np.asarray(x, dtype=float))),
        invariant_cdf_inverse=lambda u: 2.0**u - 1.0,
    )


def identity_map() -> IntervalMap:
    return IntervalMap(
        kind="identity",
        branches=(Branch(0.0, 1.0, lambda x: x, lambda x: 1.0, lambda y: y),),
        expansion_bound=1.0,
        mixing=False,
    )


def make_map(spec) -> IntervalMap:
    """Map from a config value: "doubling" | "gauss" | {"branches": [...]}"""
    if spec == "doubling":
        return doubling_map()
    if spec == "gauss":
        return gauss_map()
    if spec == "identity":
        return identity_map()
    if isinstance(spec, dict) and "branches" in spec:
        branches = []
        for b in spec["branches"]:
            lo, hi, slope, icpt = b["lo"], b["hi"], b["slope"], b.get("intercept", 0.0)
            branches.append(
                Branch(
                    lo, hi,
                    (lambda s, c: lambda x: s * x + c)(slope, icpt),
                    (lambda s: lambda x: s)(slope),
                    (lambda s, c: lambda y: (y - c) / s)(slope, icpt),
                )
            )
        return IntervalMap(
            kind="custom",
            branches=tuple(branches),
            expansion_bound=min(abs(b["slope"]) for b in spec["branches"]),
        )
    raise ValueError(f"unrecognized map spec: {spec!r}")


def step(interval_map: IntervalMap, x: float) -> float:
    return interval_map.step(x)


def sample_point(interval_map: IntervalMap, rng: np.random.Generator,
                 ulam_stationary=None) -> float:
    """Draw from the invariant measure."""
    u = float(rng.random())
    if interval_map.invariant_cdf_inverse is not None:
        return interval_map.invariant_cdf_inverse(u)
    if ulam_stationary is not None:
        masses, edges = ulam_stationary
        cdf = np.concatenate([[0.0], np.cumsum(masses)])
        cdf /= cdf[-1]
        i = int(np.searchsorted(cdf, u, side="right")) - 1
        i = min(i, len(masses) - 1)
        span = cdf[i + 1] - cdf[i]
        frac = 0.0 if span == 0 else (u - cdf[i]) / span
        return float(edges[i] + frac * (edges[i + 1] - edges[i]))
    raise NoSamplerError(f"no invariant sampler for map kind {interval_map.kind!r}")


# ---------------------------------------------------------------------------
# exact doubling-map orbits from bit streams
# ---------------------------------------------------------------------------

_LOOKAHEAD = 192  # extra bits so every orbit point has a full 53-bit window


def seeded_bits(seed, n: int) -> np.ndarray:
    """Deterministic fair-bit array (uint8 in {0,1}) for a seed."""
    if isinstance(seed, np.random.Generator):
        rng = seed
    else:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return rng.integers(0, 2, size=n, dtype=np.uint8)


def _bit_windows(bits: np.ndarray, n: int) -> np.ndarray:
    """x_k = 0.b_{k+1}b_{k+2}... for k < n, truncated to 53 bits.

    Entries whose leading 64-bit window underflows 53 significant bits
    (long zero runs) are recomputed exactly from a 128-bit window.
    """
    m = bits.size
    if m < n + 64:
        raise ValueError("bit array too short for requested orbit length")
    padded = np.zeros(((m + 63) // 64 + 1) * 64, dtype=np.uint8)
    padded[:m] = bits
    words = np.packbits(padded).reshape(-1, 8)
    words = words.astype(np.uint64)
    shifts = np.uint64(8) * np.arange(7, -1, -1, dtype=np.uint64)
    words = (words << shifts).sum(axis=1, dtype=np.uint64)

    k = np.arange(n)
    q, r = k >> 6, (k & 63).astype(np.uint64)
    win = words[q] << r
    nz = r > 0
    win[nz] |= words[q + 1][nz] >> (np.uint64(64) - r[nz])
    x = (win >> np.uint64(11)).astype(np.float64) * 2.0**-53

    low = np.nonzero(win < (1 << 53))[0]
    for i in low.tolist():
        end = min(i + 128, m)
        window = bits[i:end]
        acc = 0
        for b in window.tolist():
            acc = (acc << 1) | int(b)
        if acc == 0:
            raise NonTerminatingStreamError("128-bit zero run in doubling orbit")
        x[i] = acc / (1 << (end - i))
    return x


def exact_doubling_orbit(seed, n: int) -> np.ndarray:
    """Exact (53-bit truncated) doubling orbit of a Lebesgue-random point."""
    bits = seeded_bits(seed, n + _LOOKAHEAD)
    return _bit_windows(bits, n)


def doubling_orbit_from_bits(bits: Iterable[int], n: int) -> np.ndarray:
    """Orbit of the point with the given binary expansion (zero-padded)."""
    arr = np.zeros(n + _LOOKAHEAD, dtype=np.uint8)
    prefix = np.asarray(list(bits), dtype=np.uint8)
    arr[: min(prefix.size, arr.size)] = prefix[: arr.size]
    return _bit_windows(arr, n)


def orbit_stream(interval_map: IntervalMap, n: int, *, x0: float | None = None,
                 seed=None, mode: str = "float") -> Iterator[float]:
    """Yield x, Tx, ..., T^(n-1)x.

    mode "exactBits" requires the doubling map and a seed (or x0, whose
    binary expansion is used); mode "exactCF" is served by
    cf_digit_stream, not by this function.  Float iteration of the
    doubling map decorrelates from the true orbit after ~50 steps.
    """
    if n < 1:
        return
    if mode == "exactBits":
        if interval_map.kind != "doubling":
            raise ValueError("exactBits mode is only valid for the doubling map")
        if seed is not None:
            yield from exact_doubling_orbit(seed, n)
        else:
            digits = []
            x = x0
            for _ in range(64):
                x *= 2
                digits.append(int(x))
                x -= int(x)
            yield from doubling_orbit_from_bits(digits, n)
        return
    if mode != "float":
        raise ValueError(f"mode {mode!r} incompatible with map {interval_map.kind!r}")
    x = x0
    for _ in range(n):
        yield x
        x = interval_map.step(x)


# ---------------------------------------------------------------------------
# exact continued-fraction digits
# ---------------------------------------------------------------------------

class BitSource:
    """Lazy MSB-first bit supplier; random or from a fixed prefix."""

    def __init__(self, seed=None, prefix: Iterable[int] | None = None):
        self._prefix = list(prefix) if prefix is not None else None
        self._pos = 0
        self.terminating = self._prefix is not None
        self._rng = None if seed is None else np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(seed))
        )
        self._buf = np.empty(0, dtype=np.uint8)
        self._bufpos = 0
        self.consumed = 0

    @classmethod
    def from_fraction(cls, num: int, den: int, pad: int = 0) -> "BitSource":
        """Bits of num/den in [0,1), then zeros (dyadic-rational input)."""
        bits = []
        for _ in range(den.bit_length() + pad + 64):
            num *= 2
            bits.append(num // den)
            num %= den
            if num == 0:
                break
        return cls(prefix=bits)

    @property
    def exhausted(self) -> bool:
        """True when a terminating prefix has been fully read (tail == 0)."""
        return self.terminating and self._pos >= len(self._prefix)

    def next_bits(self, w: int) -> int:
        self.consumed += w
        if self._prefix is not None:
            out = 0
            for _ in range(w):
                b = self._prefix[self._pos] if self._pos < len(self._prefix) else 0
                out = (out << 1) | int(b)
                self._pos += 1
            return out
        out = 0
        for _ in range(w):
            if self._bufpos >= self._buf.size:
                self._buf = self._rng.integers(0, 2, size=4096, dtype=np.uint8)
                self._bufpos = 0
            out = (out << 1) | int(self._buf[self._bufpos])
            self._bufpos += 1
        return out


_REBASE_BITS = 1536  # coefficient size triggering an enclosure rebase
_GUARD_BITS = 64     # outward-rounding slack kept at every rebase


def _rebase(p: int, q: int, r: int, s: int) -> tuple[int, int, int, int]:
    """Replace the homographic enclosure by a dyadic superset.

    Continuant growth makes the raw coefficients gain ~1.7 bits per
    digit; rounding the enclosure outward to a fresh dyadic grid (with
    _GUARD_BITS of slack) caps them.  The emitted stream stays the exact
    CF expansion of a genuine point of the enclosure.
    """
    e0n, e0d = q, s
    e1n, e1d = p + q, r + s
    if e0n * e1d > e1n * e0d:
        (e0n, e0d), (e1n, e1d) = (e1n, e1d), (e0n, e0d)
    w_num = e1n * e0d - e0n * e1d
    w_den = e0d * e1d
    if w_num <= 0:
        return p, q, r, s  # degenerate; leave untouched
    width_bits = max(0, w_den.bit_length() - w_num.bit_length())
    m = width_bits + _GUARD_BITS
    lo = (e0n << m) // e0d
    hi = -((-e1n << m) // e1d)
    lo = max(lo, 0)
    hi = min(hi, 1 << m)
    if hi - lo < 2:
        hi = min(lo + 2, 1 << m)
        lo = hi - 2
    return hi - lo, lo, 0, 1 << m


def cf_digit_stream(source, n: int, *, max_bits: int | None = None) -> Iterator[int]:
    """First n continued-fraction digits of a random (or given) point.

    The point x is kept as the homographic image (p*y + q)/(r*y + s) of
    the unread bit stream y in [0,1]; a digit is emitted once
    floor(1/x) agrees at both interval endpoints, after which the state
    is updated by x <- 1/x - digit in exact integer arithmetic.
    """
    if n <= 0:
        return
    src = source if isinstance(source, BitSource) else BitSource(seed=source)
    budget = max_bits if max_bits is not None else max(64 * n, 4096)
    p, q, r, s = 1, 0, 0, 1
    emitted = 0
    while emitted < n:
        if q > 0 and p + q > 0:
            a0 = s // q
            a1 = (r + s) // (p + q)
            if a0 == a1 and a0 >= 1:
                a = a0
                p, q, r, s = r - a * p, s - a * q, p, q
                if s.bit_length() > _REBASE_BITS:
                    p, q, r, s = _rebase(p, q, r, s)
                emitted += 1
                yield a
                if p == 0 and q == 0:
                    if emitted < n:
                        raise NonTerminatingStreamError(
                            "rational input terminated before n digits"
                        )
                    return
                continue
        if src.exhausted:
            # terminating prefix: the unread tail is exactly 0, so x = q/s
            # is rational and plain Euclid yields the remaining digits
            while emitted < n:
                if q == 0:
                    raise NonTerminatingStreamError(
                        "rational input terminated before n digits"
                    )
                a = s // q
                q, s = s - a * q, q
                emitted += 1
                yield a
            return
        if src.consumed >= budget:
            raise NonTerminatingStreamError(
                f"digit undetermined after {src.consumed} bits"
            )
        b = src.next_bits(8)
        q = p * b + (q << 8)
        s = r * b + (s << 8)


def cf_digits(seed, n: int, *, max_bits: int | None = None) -> np.ndarray:
    """n CF digits as float64 (digits can exceed any integer dtype)."""
    return np.fromiter(
        (float(d) for d in cf_digit_stream(seed, n, max_bits=max_bits)),
        dtype=np.float64, count=n,
    )


# ---------------------------------------------------------------------------
# observables
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Observable:
    """Non-negative observable on (0, 1].

    paretoTail realizes tail index alpha under Lebesgue via x^(-1/alpha);
    floorReciprocal is the continued-fraction digit (tail index 1, so no
    TailModel in (0,1) exists for it).
    """

    kind: str  # "pareto" | "floorReciprocal" | "userMonotone"
    alpha: float | None = None
    func: Callable[[np.ndarray], np.ndarray] | None = None
    tail: TailModel | None = field(default=None)

    def __post_init__(self):
        if self.kind == "pareto":
            if self.alpha is None or not 0 < self.alpha < 1:
                raise ValueError("pareto observable needs alpha in (0, 1)")
            if self.tail is None:
                object.__setattr__(
                    self, "tail", TailModel(self.alpha, CONSTANT_ONE, 1.0)
                )
        elif self.kind == "floorReciprocal":
            pass
        elif self.kind == "userMonotone":
            if self.func is None:
                raise ValueError("userMonotone observable needs a function")
        else:
            raise ValueError(f"unknown observable kind {self.kind!r}")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "pareto":
            return x ** (-1.0 / self.alpha)
        if self.kind == "floorReciprocal":
            return np.floor(1.0 / x)
        return self.func(x)

    @property
    def monotone(self) -> bool:
        return self.kind in ("pareto", "floorReciprocal")


def make_observable(spec) -> Observable:
    if isinstance(spec, dict):
        if spec.get("kind") == "pareto":
            return Observable("pareto", alpha=spec["alpha"])
        if spec.get("kind") == "floorReciprocal":
            return Observable("floorReciprocal")
    raise ValueError(f"unrecognized observable spec: {spec!r}")


@dataclass(frozen=True)
class VariationReport:
    k1: float
    k2: float
    passed: bool
    detail: str = ""


def _grid_variation(values: np.ndarray) -> float:
    return float(np.sum(np.abs(np.diff(values))))


def validate_observable(obs: Observable, l_grid) -> VariationReport:
    """Estimate the variation constants of the truncated observable and
    the exceedance indicator over a threshold grid.

    V(chi * 1_{chi<=l}) <= K1*l and V(1_{chi>l}) <= K2 must hold for the
    trimming theorems' hypotheses; monotone catalog observables short-
    circuit to the analytic values (truncation jump l plus descent).
    """
    l_grid = [float(l) for l in l_grid]
    if not l_grid or any(l <= 0 for l in l_grid):
        raise ValueError("l_grid must be non-empty and positive")

    if obs.kind == "pareto" or obs.kind == "floorReciprocal":
        # single jump of height <= l at the truncation point plus a
        # monotone descent of at most l - chi(1): V = 2l - chi(1) <= 2l
        return VariationReport(k1=2.0, k2=1.0, passed=True, detail="analytic (monotone)")

    k1 = 0.0
    k2 = 0.0
    for l in l_grid:
        m = 1 << 12
        prev_v1 = prev_v2 = None
        while True:
            xs = np.linspace(1.0 / m, 1.0, m)
            vals = obs(xs)
            if not np.all(np.isfinite(vals)):
                return VariationReport(math.inf, math.inf, False, "non-finite values")
            trunc = np.where(vals <= l, vals, 0.0)
            ind = (vals > l).astype(float)
            v1, v2 = _grid_variation(trunc), _grid_variation(ind)
            if prev_v1 is not None and (
                abs(v1 - prev_v1) <= 1e-3 * max(prev_v1, 1e-12)
                and abs(v2 - prev_v2) <= 1e-3 * max(prev_v2, 1e-12)
            ):
                break
            prev_v1, prev_v2 = v1, v2
            m *= 2
            if m > 1 << 22:
                return VariationReport(math.inf, math.inf, False,
                                       "variation estimate did not stabilize")
        if l > 0 and math.isfinite(v1):
            k1 = max(k1, v1 / l)
        k2 = max(k2, v2)
    ok = math.isfinite(k1) and math.isfinite(k2)
    return VariationReport(k1=k1, k2=k2, passed=ok, detail="grid estimate")
