"""Regularly varying tails: distribution functions, generalized inverses,
Karamata truncated moments, de Bruijn conjugates and asymptotic inverses.

Tail models live on [support_low, inf) with F identically 0 below the
left endpoint; only the tail matters for trimming, and a hard endpoint
gives closed forms for the Pareto-type catalog.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .errors import IllPosedConjugateError, InfiniteQuantileError, QuadratureError

_E = math.e


@dataclass(frozen=True)
class SlowlyVarying:
    """A slowly varying function L from a small catalog.

    kinds:
      constant   L(x) = c                      (param = c)
      logPower   L(x) = (log max(x, e))^beta   (param = beta)
      logLog     L(x) = log log max(x, e^e)
      tabulated  interpolation of (x, L(x)) pairs on a log-x grid
    """

    kind: str
    param: float = 1.0
    grid: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "logPower", "logLog", "tabulated"):
            raise ValueError(f"unknown slowly varying kind {self.kind!r}")
        if self.kind == "constant" and self.param <= 0:
            raise ValueError("constant L must be positive")
        if self.kind == "tabulated":
            if not self.grid or any(x <= 0 or l <= 0 for x, l in self.grid):
                raise ValueError("tabulated L needs positive (x, L) pairs")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "constant":
            out = np.full_like(x, self.param)
        elif self.kind == "logPower":
            out = np.log(np.maximum(x, _E)) ** self.param
        elif self.kind == "logLog":
            out = np.log(np.log(np.maximum(x, math.exp(_E))))
        else:
            xs = np.array([p[0] for p in self.grid])
            ls = np.array([p[1] for p in self.grid])
            out = np.exp(np.interp(np.log(np.maximum(x, xs[0])), np.log(xs), np.log(ls)))
        return float(out) if out.ndim == 0 else out

    def power(self, p: float) -> "SlowlyVarying":
        """L^p, staying inside the catalog where possible."""
        if self.kind == "constant":
            return SlowlyVarying("constant", self.param**p)
        if self.kind == "logPower":
            return SlowlyVarying("logPower", self.param * p)
        if self.kind == "tabulated":
            return SlowlyVarying(
                "tabulated", grid=tuple((x, l**p) for x, l in self.grid)
            )
        raise ValueError(f"cannot take powers of kind {self.kind!r}")

    def is_constant(self) -> bool:
        return self.kind == "constant"

    def to_json(self) -> dict:
        return {"kind": self.kind, "param": self.param}

    @classmethod
    def from_json(cls, obj: dict) -> "SlowlyVarying":
        return cls(kind=obj["kind"], param=obj.get("param", 1.0))


CONSTANT_ONE = SlowlyVarying("constant", 1.0)


@dataclass(frozen=True)
class TailModel:
    """Distribution with 1 - F(x) = L(x)/x^alpha on [support_low, inf)."""

    alpha: float
    L: SlowlyVarying = CONSTANT_ONE
    support_low: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("tail index alpha must lie in (0, 1)")
        if self.support_low < 0:
            raise ValueError("support_low must be >= 0")
        # F must be non-decreasing: reject models whose unclamped tail
        # increases somewhere above the clamp region.
        xs = np.geomspace(max(self.support_low, 1e-3), 1e12, 200)
        tails = np.minimum(1.0, self.L(xs) / xs**self.alpha)
        if np.any(np.diff(tails) > 1e-12):
            raise ValueError("tail L(x)/x^alpha is not non-increasing; F would decrease")

    # -- distribution access -------------------------------------------------
    def tail_probability(self, t: float) -> float:
        if t < 0:
            raise ValueError("tail probability undefined for t < 0")
        if t < self.support_low:
            return 1.0
        return min(1.0, float(self.L(t)) / t**self.alpha)

    def cdf(self, x: float) -> float:
        if x < 0:
            return 0.0
        return 1.0 - self.tail_probability(x)

    def generalized_inverse(self, y: float) -> float:
        """F^<-(y) = inf{x : F(x) >= y}."""
        if not 0.0 <= y <= 1.0:
            raise ValueError("y must lie in [0, 1]")
        if y == 1.0:
            raise InfiniteQuantileError("quantile at y=1 with unbounded support")
        if y == 0.0:
            return 0.0
        target_tail = 1.0 - y
        if self.L.is_constant():
            c = self.L.param
            x = (c / target_tail) ** (1.0 / self.alpha)
            x = max(x, self.support_low)
            while self.cdf(x) < y:  # one-ulp rounding guard for the infimum
                x = float(np.nextafter(x, np.inf))
            return x
        lo = max(self.support_low, 1e-12)
        hi = max(2.0 * lo, 2.0)
        while self.cdf(hi) < y:
            hi *= 2.0
            if hi > 1e300:
                raise InfiniteQuantileError("quantile bracket exceeded float range")
        if self.cdf(lo) >= y:
            return lo
        x = optimize.brentq(lambda t: self.cdf(t) - y, lo, hi, xtol=1e-300, rtol=1e-15)
        # round up until F(x) >= y, honoring the infimum definition
        while self.cdf(x) < y:
            x = np.nextafter(x, np.inf)
        return float(x)

    def truncated_mean(self, u: float) -> float:
        """int_0^u x dF, closed form for constant L, quadrature otherwise."""
        if u < 0:
            raise ValueError("u must be >= 0")
        if u <= self.support_low:
            return 0.0
        if self.L.is_constant():
            c = self.L.param
            a = self.alpha
            # tail becomes < 1 at x_c; below that F has an atom at support_low
            x_c = max(self.support_low, c ** (1.0 / a))
            atom = self.support_low * self.cdf(self.support_low)
            if u <= x_c:
                return atom
            cont = c * a / (1.0 - a) * (u ** (1.0 - a) - x_c ** (1.0 - a))
            return atom + cont
        # integrate in log coordinates; the raw [support_low, u] interval
        # spans many decades and defeats the adaptive error estimate
        lo = max(self.support_low, 1e-12)
        val, err = integrate.quad(
            lambda s: self.cdf(math.exp(s)) * math.exp(s),
            math.log(lo), math.log(u), epsrel=1e-10, limit=200,
        )
        result = u * self.cdf(u) - val
        if result != 0 and err > 1e-6 * abs(val):
            raise QuadratureError("quadrature failure in truncated_mean", err)
        return result

    # -- serialization -------------------------------------------------------
    def to_json(self) -> dict:
        return {
            "alpha": self.alpha,
            "L": self.L.to_json(),
            "supportLow": self.support_low,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TailModel":
        return cls(
            alpha=obj["alpha"],
            L=SlowlyVarying.from_json(obj.get("L", {"kind": "constant", "param": 1.0})),
            support_low=obj.get("supportLow", 1.0),
        )


def tail_probability(tail: TailModel, t: float) -> float:
    return tail.tail_probability(t)


def generalized_inverse(tail: TailModel, y: float) -> float:
    return tail.generalized_inverse(y)


def truncated_mean(tail: TailModel, u: float) -> float:
    return tail.truncated_mean(u)


def karamata_truncated_moment(alpha: float, L: SlowlyVarying, u: float) -> float:
    """Karamata asymptotic alpha/(1-alpha) * u^(1-alpha) * L(u)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return alpha / (1.0 - alpha) * u ** (1.0 - alpha) * float(L(u))


@dataclass(frozen=True)
class DeBruijnConjugate:
    """Callable L# with L(x) * L#(x L(x)) -> 1.

    Constants invert in closed form; everything else is solved by
    bisection of x * L(x), which is the only robust generic inversion.
    """

    base: SlowlyVarying
    method: str
    tolerance: float = 1e-9
    bracket: tuple[float, float] | None = None
    _solve_lo: float = field(default=_E, repr=False)

    def __call__(self, y):
        if np.ndim(y) > 0:
            return np.array([self(float(v)) for v in np.asarray(y)])
        y = float(y)
        if self.method == "closedForm":
            return 1.0 / self.base.param
        x_star = self._invert_xL(y)
        return 1.0 / float(self.base(x_star))

    def _invert_xL(self, y: float) -> float:
        g = lambda x: x * float(self.base(x))
        if self.bracket is not None:
            lo, hi = self.bracket
        else:
            lo = self._solve_lo
            hi = max(2 * lo, y)
            while g(hi) < y:
                hi *= 2.0
                if hi > 1e308:
                    raise IllPosedConjugateError("no upper bracket for x*L(x)=y")
        if g(lo) > y:
            lo = min(lo, y)  # small-y guard; x*L(x) >= x on the catalog
            if g(lo) > y:
                return lo
        samples = np.geomspace(lo, hi, 33)
        gs = [g(s) for s in samples]
        if any(b < a for a, b in zip(gs, gs[1:])):
            raise IllPosedConjugateError("x*L(x) non-monotone on the bracket")
        return float(optimize.brentq(lambda x: g(x) - y, lo, hi, rtol=1e-14))

    def residual(self, x: float) -> float:
        """|L(x) * L#(x L(x)) - 1|, the defining-limit error at x."""
        lx = float(self.base(x))
        return abs(lx * self(x * lx) - 1.0)


def de_bruijn_conjugate(
    L: SlowlyVarying,
    tolerance: float = 1e-9,
    bracket: tuple[float, float] | None = None,
) -> DeBruijnConjugate:
    if L.is_constant():
        return DeBruijnConjugate(base=L, method="closedForm", tolerance=tolerance)
    return DeBruijnConjugate(
        base=L, method="numericFixedPoint", tolerance=tolerance, bracket=bracket
    )


def asymptotic_inverse(
    gamma: float, delta: float, L: SlowlyVarying
) -> Callable[[float], float]:
    """Asymptotic inverse of f(x) = x^(gamma*delta) * L^gamma(x^delta):
    g(x) = x^(1/(gamma*delta)) * (L#(x^(1/gamma)))^(1/delta)."""
    if gamma <= 0 or delta <= 0:
        raise ValueError("gamma and delta must be positive")
    conj = de_bruijn_conjugate(L)

    def g(x: float) -> float:
        return x ** (1.0 / (gamma * delta)) * conj(x ** (1.0 / gamma)) ** (1.0 / delta)

    return g
