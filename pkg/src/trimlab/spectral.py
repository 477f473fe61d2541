"""Ulam discretization of the transfer operator, eigen-structure,
correlation decay, perturbed eigenvalue curves and an empirical probe of
the maximal-deviation exponential inequality.

Uniform bins throughout: the function-space action is then exactly the
transpose of the mass-transfer matrix, which keeps the operator duality
exact at the discrete level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma

from .dynamics import IntervalMap, gauss_branch
from .errors import SpectralConvergenceError

_GAUSS_TAIL_WARN = 1e-8


@dataclass(frozen=True)
class UlamOperator:
    """Row-stochastic bin-transfer matrix P[i][j] = m(I_i & T^-1 I_j)/m(I_i)."""

    k: int
    edges: np.ndarray
    P: np.ndarray
    build_method: str  # "analyticBranches" | "monteCarloSamples(count)"
    map_kind: str
    mixing: bool = True
    warnings: tuple[str, ...] = ()
    tail_bound: float = 0.0

    def __post_init__(self):
        if self.k < 2:
            raise ValueError("need k >= 2 bins")
        P = self.P
        if P.shape != (self.k, self.k):
            raise ValueError("matrix shape mismatch")
        if np.any(P < -1e-15) or np.any(P > 1.0 + 1e-12):
            raise ValueError("entries outside [0, 1]")
        tol = 1e-10 if self.build_method == "analyticBranches" else 1e-3
        rows = P.sum(axis=1)
        if np.max(np.abs(rows - 1.0)) > tol:
            raise ValueError(
                f"row sums deviate from 1 by {np.max(np.abs(rows - 1.0)):.3e} > {tol}"
            )

    @property
    def function_action(self) -> np.ndarray:
        """Matrix of h -> operator(h) in bin coordinates (uniform bins)."""
        return self.P.T


def _deposit(col: np.ndarray, u: float, v: float, edges: np.ndarray) -> None:
    """Add the length of [u, v) overlapping each bin into col."""
    if v <= u:
        return
    k = len(col)
    i0 = min(int(u * k), k - 1)
    i1 = min(int(v * k), k - 1)
    if v * k == i1 and i1 > i0:
        i1 -= 1  # right endpoint on a boundary belongs to the bin below
    if i0 == i1:
        col[i0] += v - u
        return
    for i in range(i0, i1 + 1):
        col[i] += max(0.0, min(v, edges[i + 1]) - max(u, edges[i]))


def _build_gauss_analytic(k: int, edges: np.ndarray) -> tuple[np.ndarray, float]:
    """Preimages T^-1[c,d) = union over m of (1/(d+m), 1/(c+m)].

    Branches above m_max all land inside bin 0 (m_max >= k), and their
    total length telescopes to a digamma difference, so the tail is
    summed in closed form instead of being dropped or lumped.
    """
    m_max = max(64, 4 * k)
    mass = np.zeros((k, k))
    ms = np.arange(1, m_max + 1, dtype=np.float64)
    for j in range(k):
        c, d = edges[j], edges[j + 1]
        u = 1.0 / (d + ms)
        v = 1.0 / (c + ms)
        i_u = np.minimum((u * k).astype(int), k - 1)
        i_v = np.minimum((v * k).astype(int), k - 1)
        on_edge = (v * k == i_v) & (i_v > i_u)
        i_v = np.where(on_edge, i_v - 1, i_v)
        single = i_u == i_v
        np.add.at(mass[:, j], i_u[single], (v - u)[single])
        for idx in np.nonzero(~single)[0]:
            _deposit(mass[:, j], u[idx], v[idx], edges)
        # sum_{m > m_max} 1/(c+m) - 1/(d+m), entirely inside bin 0
        mass[0, j] += float(digamma(d + m_max + 1) - digamma(c + m_max + 1))
    return mass, 0.0


def _build_branch_analytic(
    interval_map: IntervalMap, k: int, edges: np.ndarray
) -> np.ndarray:
    mass = np.zeros((k, k))
    for j in range(k):
        c, d = edges[j], edges[j + 1]
        for b in interval_map.branches:
            x1, x2 = b.inverse(c), b.inverse(d)
            u, v = (x1, x2) if x1 <= x2 else (x2, x1)
            u, v = max(u, b.lo), min(v, b.hi)
            _deposit(mass[:, j], u, v, edges)
    return mass


def build_ulam(
    interval_map: IntervalMap,
    k: int,
    method: str = "analytic",
    samples: int = 10**6,
    seed: int = 0,
) -> UlamOperator:
    if k < 2:
        raise ValueError("need k >= 2 bins")
    edges = np.linspace(0.0, 1.0, k + 1)
    warnings: list[str] = []
    tail_bound = 0.0
    if method == "analytic":
        if interval_map.kind == "gauss":
            mass, tail_bound = _build_gauss_analytic(k, edges)
            if tail_bound > _GAUSS_TAIL_WARN / k:
                warnings.append(f"branch truncation tail mass {tail_bound:.3e}")
        else:
            if not interval_map.branches:
                raise ValueError("analytic build requires inverse branches")
            mass = _build_branch_analytic(interval_map, k, edges)
        P = mass * k  # divide by the bin measure 1/k
        build_method = "analyticBranches"
    elif method == "mc":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        x = rng.random(samples)
        if interval_map.kind == "doubling":
            y = np.mod(2.0 * x, 1.0)
        elif interval_map.kind == "gauss":
            x = np.where(x == 0.0, 0.5, x)
            y = np.mod(1.0 / x, 1.0)
        else:
            y = np.array([interval_map.step(float(xi)) for xi in x])
        counts, _, _ = np.histogram2d(x, y, bins=[edges, edges])
        row = counts.sum(axis=1, keepdims=True)
        if np.any(row == 0):
            raise ValueError("empty row in Monte Carlo build; increase samples")
        P = counts / row
        build_method = f"monteCarloSamples({samples})"
    else:
        raise ValueError(f"unknown build method {method!r}")
    P = np.clip(P, 0.0, 1.0)
    return UlamOperator(
        k=k, edges=edges, P=P,
        build_method=build_method,
        map_kind=interval_map.kind,
        mixing=interval_map.mixing,
        warnings=tuple(warnings),
        tail_bound=tail_bound,
    )


# ---------------------------------------------------------------------------
# eigen-structure
# ---------------------------------------------------------------------------

_POWER_TOL = 1e-12
_POWER_MAX_ITERS = 10**5


def _power_iterate(A: np.ndarray, v0: np.ndarray) -> tuple[float, np.ndarray]:
    v = v0 / np.sum(np.abs(v0))
    residual = math.inf
    for _ in range(_POWER_MAX_ITERS):
        w = A @ v
        norm = np.sum(np.abs(w))
        if norm == 0.0:
            return 0.0, w
        w = w / norm
        residual = float(np.max(np.abs(w - v)))
        v = w
        if residual < _POWER_TOL:
            lam = float(v @ (A @ v)) / float(v @ v)
            return lam, v
    raise SpectralConvergenceError("slow spectral convergence", residual)


@dataclass(frozen=True)
class SpectralReport:
    leading_eigenvalue: float
    stationary: np.ndarray
    second_modulus: float | None = None
    residuals: dict = field(default_factory=dict)
    flags: tuple[str, ...] = ()


def leading_eigen(op: UlamOperator) -> SpectralReport:
    """Stationary mass vector and leading eigenvalue by power iteration."""
    A = op.function_action
    v0 = np.full(op.k, 1.0 / op.k)
    lam, v = _power_iterate(A, v0)
    v = np.where(v < 0, 0.0, v)
    v = v / v.sum()
    flags = () if op.mixing else ("non-mixing: stationary vector not unique",)
    return SpectralReport(
        leading_eigenvalue=lam,
        stationary=v,
        residuals={"power": float(np.max(np.abs(A @ v - lam * v)))},
        flags=flags,
    )


_DENSE_CROSSCHECK_K = 512


def spectral_gap(op: UlamOperator, report: SpectralReport | None = None) -> float:
    """Second eigenvalue modulus of the bin-transfer action."""
    report = report or leading_eigen(op)
    A = op.function_action
    v = report.stationary
    # deflate the leading pair: left eigenvector of A is the all-ones row
    N = A - report.leading_eigenvalue * np.outer(v, np.ones(op.k))
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(7)))
    x = rng.standard_normal(op.k)
    x -= x.mean()
    rho_power: float | None = None
    for _ in range(_POWER_MAX_ITERS):
        y = N @ x
        norm = float(np.linalg.norm(y))
        # below unit-vector roundoff scale: the deflated action is zero
        if norm < 1e-12 * math.sqrt(op.k):
            rho_power = 0.0
            break
        y = y / norm
        aligned = min(np.linalg.norm(y - x), np.linalg.norm(y + x)) < 1e-12
        if aligned and abs(float(np.linalg.norm(N @ y)) - norm) < 1e-9 + 1e-6 * norm:
            rho_power = norm
            break
        x = y
    if rho_power == 0.0:
        # norm collapse certifies a numerically nilpotent deflation; the
        # dense eigensolve is unreliable here (defective-eigenvalue
        # conditioning inflates zero eigenvalues to roughly eps^(1/m))
        return 0.0
    if op.k <= _DENSE_CROSSCHECK_K:
        eigs = np.sort(np.abs(np.linalg.eigvals(A)))[::-1]
        rho = float(eigs[1])
        if rho_power is None:
            return rho  # complex second pair defeats power iteration
        if abs(rho_power - rho) > 1e-6 + 1e-3 * rho:
            raise SpectralConvergenceError(
                "power iteration disagrees with dense eigensolve",
                abs(rho_power - rho),
            )
        return rho_power
    if rho_power is None:
        # complex second pair: fall back to the average growth factor
        growth = []
        for _ in range(256):
            y = N @ x
            growth.append(float(np.linalg.norm(y)))
            if growth[-1] < 1e-150:
                return 0.0
            x = y / growth[-1]
        return float(np.exp(np.mean(np.log(growth[-64:]))))
    return rho_power


# ---------------------------------------------------------------------------
# correlation decay
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrelationReport:
    lags: np.ndarray
    correlations: np.ndarray
    standard_errors: np.ndarray
    tau_hat: float | None
    flag: str = ""
    gap_comparison: str = ""


def _sample_invariant(interval_map: IntervalMap, rng, count: int) -> np.ndarray:
    u = rng.random(count)
    if interval_map.invariant_cdf_inverse is not None:
        if interval_map.kind == "gauss":
            return 2.0**u - 1.0
        return np.array([interval_map.invariant_cdf_inverse(ui) for ui in u])
    return u


def _step_array(interval_map: IntervalMap, x: np.ndarray) -> np.ndarray:
    if interval_map.kind == "doubling":
        return np.mod(2.0 * x, 1.0)
    if interval_map.kind == "gauss":
        x = np.where(x <= 0.0, 0.5, x)
        return np.mod(1.0 / x, 1.0)
    return np.array([interval_map.step(float(xi)) for xi in x])


def correlation_decay(
    interval_map: IntervalMap,
    phi1,
    phi2,
    n_max: int,
    sample_count: int = 10**5,
    seed: int = 0,
    rho: float | None = None,
) -> CorrelationReport:
    """Monte Carlo Cor(n) = |E[phi1(T^n X) phi2(X)] - E phi1 E phi2|.

    Fits the log-slope of Cor(n) where the signal exceeds 3x its
    standard error; all-noise output is reported as decay too fast to
    resolve rather than raised, since it is a success for fast mixers.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    x = _sample_invariant(interval_map, rng, sample_count)
    p2 = np.asarray(phi2(x), dtype=np.float64)
    cors, ses = [], []
    cur = x.copy()
    for n in range(n_max + 1):
        p1 = np.asarray(phi1(cur), dtype=np.float64)
        prod = p1 * p2
        cor = float(prod.mean() - p1.mean() * p2.mean())
        cors.append(abs(cor))
        ses.append(float(prod.std(ddof=1) / math.sqrt(sample_count)))
        if n < n_max:
            cur = _step_array(interval_map, cur)
    lags = np.arange(n_max + 1)
    cors = np.array(cors)
    ses = np.array(ses)
    usable = (cors > 3.0 * ses) & (lags >= 1)
    tau_hat = None
    flag = ""
    if usable.sum() >= 2:
        slope = np.polyfit(lags[usable], np.log(cors[usable]), 1)[0]
        tau_hat = float(np.exp(slope))
    else:
        flag = "decay too fast to resolve"
    comparison = ""
    if rho is not None and tau_hat is not None:
        comparison = f"tau_hat={tau_hat:.4f} vs rho_hat={rho:.4f}"
    return CorrelationReport(
        lags=lags, correlations=cors, standard_errors=ses,
        tau_hat=tau_hat, flag=flag, gap_comparison=comparison,
    )


# ---------------------------------------------------------------------------
# perturbed eigenvalue curve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LambdaCurvePoint:
    t: float
    lam: float
    label: str  # "" or "extrapolation"


def perturbed_leading_eigenvalue(
    op: UlamOperator,
    phi_bar: np.ndarray,
    t_grid,
    report: SpectralReport | None = None,
) -> list[LambdaCurvePoint]:
    """Leading eigenvalue of h -> operator(e^{t phi} h) per grid point.

    phi_bar holds bin-averaged observable values and must be centered
    under the operator's stationary measure; the multiplication acts
    before the unperturbed operator.
    """
    phi_bar = np.asarray(phi_bar, dtype=np.float64)
    if phi_bar.shape != (op.k,):
        raise ValueError("phi_bar must be bin-resolved (length k)")
    report = report or leading_eigen(op)
    center = float(report.stationary @ phi_bar)
    if abs(center) > 1e-8:
        raise ValueError(f"phi not centered: integral {center:.3e} exceeds 1e-8")
    A = op.function_action
    sup = float(np.max(np.abs(phi_bar)))
    out = []
    for t in t_grid:
        t = float(t)
        M = A * np.exp(t * phi_bar)[np.newaxis, :]  # multiply, then transfer
        lam, _ = _power_iterate(M, np.full(op.k, 1.0 / op.k))
        label = "extrapolation" if abs(t) * sup > 2.0 else ""
        out.append(LambdaCurvePoint(t=t, lam=lam, label=label))
    return out


def bin_average(op: UlamOperator, func, points_per_bin: int = 64) -> np.ndarray:
    """Midpoint-rule bin averages of a pointwise function."""
    vals = np.empty(op.k)
    for i in range(op.k):
        xs = np.linspace(op.edges[i], op.edges[i + 1], points_per_bin + 1)
        mids = 0.5 * (xs[:-1] + xs[1:])
        vals[i] = float(np.mean(func(mids)))
    return vals


# ---------------------------------------------------------------------------
# empirical deviation probe
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeviationReport:
    u_grid: np.ndarray
    tail: np.ndarray
    K_hat: float | None
    U_hat: float | None
    envelope_ok: bool
    flag: str = ""


def empirical_deviation_probe(
    interval_map: IntervalMap,
    phi,
    n: int,
    u_grid,
    trials: int,
    seed: int = 0,
    phi_norm: float | None = None,
    phi_l1: float | None = None,
    mode: str = "float",
) -> DeviationReport:
    """Empirical tail of max_{i<=n} |S_i phi| against the exponential
    envelope K exp(-U (u/|phi|_BV) min{u/(n |phi|_1), 1}).

    The constants are existential, so this is an envelope fit: K_hat and
    U_hat come from least squares on the log tail over u values with at
    least 5 exceedances, then K_hat is raised until the envelope
    dominates the empirical curve on the fit range.
    """
    if trials < 100:
        raise ValueError("need trials >= 100")
    u_grid = np.asarray(sorted(float(u) for u in u_grid))
    if phi_norm is None or phi_l1 is None:
        xs = np.linspace(1e-9, 1.0, 1 << 16)
        vals = np.asarray(phi(xs), dtype=np.float64)
        sup = float(np.max(np.abs(vals)))
        var = float(np.sum(np.abs(np.diff(vals))))
        if phi_norm is None:
            phi_norm = sup + var
        if phi_l1 is None:
            dens = (
                interval_map.invariant_density(xs)
                if interval_map.invariant_density is not None
                else np.ones_like(xs)
            )
            phi_l1 = float(np.mean(np.abs(vals) * dens))
    maxima = np.empty(trials)
    use_exact = mode == "exactBits" and interval_map.kind == "doubling"
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    for t in range(trials):
        if use_exact:
            from .dynamics import exact_doubling_orbit

            orbit = exact_doubling_orbit((seed, t), n)
        else:
            trial_rng = np.random.Generator(
                np.random.PCG64(np.random.SeedSequence((seed, t)))
            )
            orbit = np.empty(n)
            orbit[0] = _sample_invariant(interval_map, trial_rng, 1)[0]
            for i in range(1, n):
                orbit[i] = interval_map.step(orbit[i - 1])
        s = np.cumsum(np.asarray(phi(orbit), dtype=np.float64))
        maxima[t] = float(np.max(np.abs(s)))
    _ = rng
    tail = np.array([float(np.mean(maxima >= u)) for u in u_grid])

    exceed = tail * trials
    fit_mask = (exceed >= 5) & (u_grid > 0)
    if not np.any(exceed > 0):
        return DeviationReport(u_grid, tail, None, None, False,
                               "all mass below smallest u")
    K_hat = U_hat = None
    envelope_ok = False
    if fit_mask.sum() >= 2:
        g = (u_grid / phi_norm) * np.minimum(u_grid / (n * phi_l1), 1.0)
        X = np.column_stack([np.ones(fit_mask.sum()), -g[fit_mask]])
        coef, *_ = np.linalg.lstsq(X, np.log(tail[fit_mask]), rcond=None)
        K_hat, U_hat = float(np.exp(coef[0])), float(coef[1])
        if U_hat > 0:
            envelope = K_hat * np.exp(-U_hat * g[fit_mask])
            ratio = float(np.max(tail[fit_mask] / envelope))
            if ratio > 1.0:
                K_hat *= ratio
            envelope_ok = True
    return DeviationReport(u_grid, tail, K_hat, U_hat, envelope_ok)
