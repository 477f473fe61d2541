"""Trimming-plan construction: truncation levels f_n, expected exceedance
counts a_n, trim counts b_n, normings d_n and deviation allowances.

All logs are natural unless a base is written out.  Divergence and o()
hypotheses cannot be decided from finitely many grid points, so the
diagnostics here report trends and label every verdict advisory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import PlanError
from .regvar import SlowlyVarying, TailModel, de_bruijn_conjugate
from .trimming import CheckpointGrid


@dataclass(frozen=True)
class PsiFunction:
    """Positive summability weight: Sum 1/psi(n) converges.

    kinds:
      square          psi(n) = n^2
      piecewiseRemark psi(n) = (log2 n)^2 at n = 2^k, n^2 otherwise
      userAsserted    arbitrary positive function, membership asserted
                      by the caller and not certified here
    """

    kind: str
    fn: Callable[[int], float] | None = None

    def __post_init__(self):
        if self.kind not in ("square", "piecewiseRemark", "userAsserted"):
            raise ValueError(f"unknown psi kind {self.kind!r}")
        if self.kind == "userAsserted" and self.fn is None:
            raise ValueError("userAsserted psi needs a function")

    def __call__(self, n: int) -> float:
        n = int(n)
        if n < 1:
            raise ValueError("psi defined for n >= 1")
        if self.kind == "square":
            val = float(n) ** 2
        elif self.kind == "piecewiseRemark":
            if n >= 2 and n & (n - 1) == 0:
                val = math.log2(n) ** 2
            else:
                val = float(n) ** 2
        else:
            val = float(self.fn(n))
        if val <= 0 and n >= 3:
            raise ValueError(f"psi({n}) = {val} violates positivity")
        return val

    def to_json(self) -> dict:
        if self.kind == "userAsserted":
            raise ValueError("userAsserted psi is not serializable")
        return {"kind": self.kind}

    @classmethod
    def from_json(cls, obj) -> "PsiFunction":
        if isinstance(obj, str):
            return cls(obj)
        return cls(obj["kind"])


PSI_SQUARE = PsiFunction("square")


def _log_psi_floor_log(n: int, psi: PsiFunction) -> float:
    m = math.floor(math.log(n))
    if m < 1:
        raise ValueError(f"floor(log n) < 1 at n={n}; need n >= 3")
    return math.log(psi(m))


def c_function(k: float, n: int, eps: float, psi: PsiFunction = PSI_SQUARE) -> float:
    """(max{k, log psi(floor(log n))})^(1/2+eps) * (log psi(floor(log n)))^(1/2-eps)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < 3:
        raise ValueError("n must be >= 3")
    if not 0.0 < eps < 0.25:
        raise ValueError("eps must lie in (0, 1/4)")
    lp = _log_psi_floor_log(n, psi)
    return max(float(k), lp) ** (0.5 + eps) * lp ** (0.5 - eps)


@dataclass(frozen=True)
class TrimmingPlan:
    """Aligned per-checkpoint schedules for one experiment."""

    grid: CheckpointGrid
    f: tuple[float, ...]      # truncation levels
    a: tuple[float, ...]      # expected exceedance counts n(1 - F(f_n))
    b: tuple[int, ...]        # trim counts
    d: tuple[float, ...]      # normings
    gamma: tuple[float, ...]  # deviation allowances b_n - a_n
    eps: float
    W: float
    psi: PsiFunction
    provenance: str           # generalTheorem | regvarTheorem | userFixed
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        m = len(self.grid)
        for name in ("f", "a", "b", "d", "gamma"):
            if len(getattr(self, name)) != m:
                raise ValueError(f"schedule {name!r} misaligned with grid")
        if any(bi < ai - 1e-9 for ai, bi in zip(self.a, self.b)):
            raise ValueError("b_n >= a_n violated")
        if any(ai < 0 for ai in self.a):
            raise ValueError("a_n >= 0 violated")
        if any(di <= 0 for di in self.d):
            raise ValueError("d_n > 0 violated")
        if self.provenance not in ("generalTheorem", "regvarTheorem", "userFixed"):
            raise ValueError(f"unknown provenance {self.provenance!r}")


def _trend_verdict(seq: Sequence[float], expect: str) -> str:
    """Advisory trend check: compare last value against first."""
    first, last = seq[0], seq[-1]
    if expect == "divergence":
        ok = last > first
        return ("consistent with divergence" if ok else "inconsistent") + " (advisory)"
    ok = last < first
    return ("consistent with o()" if ok else "inconsistent") + " (advisory)"


def general_trimming_plan(
    tail: TailModel,
    f_schedule: Callable[[int], float],
    grid: CheckpointGrid,
    eps: float = 0.1,
    W: float = 4.0,
    psi: PsiFunction = PSI_SQUARE,
) -> TrimmingPlan:
    """Plan with b_n = ceil(a_n + W max{a_n^(1/2+eps) (loglog n)^(1/2-eps), loglog n})."""
    if not 0.0 < eps < 0.25:
        raise ValueError("eps must lie in (0, 1/4)")
    if W < 0:
        raise ValueError("W must be >= 0")
    f_list, a_list, b_list, d_list, g_list, cond1 = [], [], [], [], [], []
    for n in grid:
        if n < 3:
            raise PlanError("grid entries below 3 rejected (log log n undefined)", n)
        f_n = float(f_schedule(n))
        if tail.cdf(f_n) <= 0.0:
            raise PlanError("threshold below support", n)
        a_n = n * tail.tail_probability(f_n)
        d_n = n * tail.truncated_mean(f_n)
        lll = math.log(math.log(n))
        margin = W * max(a_n ** (0.5 + eps) * lll ** (0.5 - eps), lll)
        b_n = math.ceil(a_n + margin)
        f_list.append(f_n)
        a_list.append(a_n)
        b_list.append(b_n)
        d_list.append(d_n)
        g_list.append(b_n - a_n)
        cond1.append(
            f_n / d_n * max(a_n ** (0.5 + eps) * lll ** (0.5 - eps), math.log(n))
        )
    diagnostics = {
        "growthCondition": {
            "values": cond1,
            "verdict": _trend_verdict(cond1, "o"),
        }
    }
    return TrimmingPlan(
        grid=grid,
        f=tuple(f_list), a=tuple(a_list), b=tuple(b_list),
        d=tuple(d_list), gamma=tuple(g_list),
        eps=eps, W=W, psi=psi,
        provenance="generalTheorem",
        diagnostics=diagnostics,
    )


def regvar_norming(
    alpha: float,
    L: SlowlyVarying,
    b_schedule: Sequence[int],
    grid: CheckpointGrid,
) -> tuple[float, ...]:
    """d_n = alpha/(1-alpha) n^(1/alpha) b_n^(1-1/alpha) (L^(1/alpha))#((n/b_n)^(1/alpha))."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    cps = list(grid)
    if len(b_schedule) != len(cps):
        raise ValueError("b schedule misaligned with grid")
    for n, b in zip(cps, b_schedule):
        if not 1 <= b < n:
            raise ValueError(f"need 1 <= b_n < n, got b={b} at n={n}")
    conj = de_bruijn_conjugate(L.power(1.0 / alpha))
    out = []
    for n, b in zip(cps, b_schedule):
        out.append(
            alpha / (1.0 - alpha)
            * n ** (1.0 / alpha)
            * b ** (1.0 - 1.0 / alpha)
            * float(conj((n / b) ** (1.0 / alpha)))
        )
    return tuple(out)


def threshold_from_trim(
    tail: TailModel,
    b_schedule: Sequence[int],
    grid: CheckpointGrid,
    W: float = 4.0,
    eps: float = 0.1,
    psi: PsiFunction = PSI_SQUARE,
) -> tuple[float, ...]:
    """f_n = F^<-(1 - (b_n - W c(b_n, n))/n) - 1."""
    cps = list(grid)
    if len(b_schedule) != len(cps):
        raise ValueError("b schedule misaligned with grid")
    out = []
    for n, b in zip(cps, b_schedule):
        adjusted = b - W * c_function(max(b, 1), n, eps, psi)
        if not 0.0 < adjusted < n:
            raise PlanError("trim too small for margin", n)
        out.append(tail.generalized_inverse(1.0 - adjusted / n) - 1.0)
    return tuple(out)


def condition_diagnostics(
    plan: TrimmingPlan,
    tail: TailModel,
    psi: PsiFunction | None = None,
) -> dict:
    """Hypothesis ratio sequences on the grid, with advisory trend verdicts.

    Three ratios: truncated-mean growth (f_n/d_n against n/log psi(n)),
    regularly varying threshold growth (f_n^alpha/L(f_n) against
    n/log psi(floor(log n))), and trim-count divergence
    (b_n/log psi(floor(log n)) -> infinity).
    """
    psi = psi or plan.psi
    cps = list(plan.grid)
    ratio_a, ratio_regvar, ratio_bn = [], [], []
    for n, f_n, d_n, b_n in zip(cps, plan.f, plan.d, plan.b):
        lp_direct = math.log(psi(n))
        lp_nested = _log_psi_floor_log(n, psi)
        ratio_a.append((f_n / d_n) / (n / lp_direct))
        reg = f_n ** tail.alpha / float(tail.L(f_n))
        ratio_regvar.append(reg / (n / lp_nested) if lp_nested > 0 else 0.0)
        ratio_bn.append(b_n / lp_nested if lp_nested > 0 else math.inf)
    return {
        "truncatedMeanGrowth": {
            "values": ratio_a,
            "verdict": _trend_verdict(ratio_a, "o"),
        },
        "regvarThresholdGrowth": {
            "values": ratio_regvar,
            "verdict": _trend_verdict(ratio_regvar, "o"),
        },
        "trimCountDivergence": {
            "values": ratio_bn,
            "verdict": _trend_verdict(ratio_bn, "divergence"),
        },
    }
