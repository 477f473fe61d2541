"""Config-driven experiments: plan construction, per-seed orbit streams,
streaming profiles, ratio assembly, summaries and deterministic
CSV/JSON persistence.

Determinism contract: the same resolved configuration produces byte
identical rows CSV (fixed row order, shortest round-trip floats,
splittable per-seed RNG so extending the seed set never changes
existing rows).
"""

from __future__ import annotations

import ast
import importlib.resources
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .dynamics import (
    IntervalMap,
    Observable,
    cf_digits,
    exact_doubling_orbit,
    make_map,
    make_observable,
    sample_point,
    validate_observable,
)
from .errors import ConfigError, InvariantViolation
from .regvar import TailModel
from .sequences import (
    PsiFunction,
    TrimmingPlan,
    c_function,
    general_trimming_plan,
    regvar_norming,
    threshold_from_trim,
)
from .trimming import CheckpointGrid, default_capacity, streaming_profile

# ---------------------------------------------------------------------------
# schedule expressions
# ---------------------------------------------------------------------------

_EXPR_FUNCS = {
    "log": math.log, "log2": math.log2, "log10": math.log10,
    "sqrt": math.sqrt, "exp": math.exp,
    "ceil": math.ceil, "floor": math.floor,
    "min": min, "max": max, "abs": abs,
}
_EXPR_CONSTS = {"pi": math.pi, "e": math.e, "inf": math.inf}
_ALLOWED_NODES = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load,
    ast.Constant, ast.Add, ast.Sub, ast.Mult, ast.Div, ast.FloorDiv,
    ast.Mod, ast.Pow, ast.USub, ast.UAdd,
)


def compile_schedule(expr: str, variables: tuple[str, ...] = ("n",)):
    """Compile an arithmetic schedule expression such as "ceil(log(n)**2)".

    Only arithmetic operators, whitelisted math functions and the given
    variables are allowed; anything else is rejected at compile time.
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"bad schedule expression {expr!r}: {exc}") from exc
    allowed_names = set(_EXPR_FUNCS) | set(_EXPR_CONSTS) | set(variables)
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED_NODES):
            raise ConfigError(
                f"schedule expression {expr!r} uses forbidden syntax "
                f"({type(node).__name__})"
            )
        if isinstance(node, ast.Name) and node.id not in allowed_names:
            raise ConfigError(f"unknown name {node.id!r} in expression {expr!r}")
        if isinstance(node, ast.Call) and (
            not isinstance(node.func, ast.Name) or node.func.id not in _EXPR_FUNCS
        ):
            raise ConfigError(f"only whitelisted calls allowed in {expr!r}")
    code = compile(tree, "<schedule>", "eval")

    def evaluate(**kwargs):
        scope = dict(_EXPR_FUNCS)
        scope.update(_EXPR_CONSTS)
        scope.update(kwargs)
        return eval(code, {"__builtins__": {}}, scope)

    return evaluate


# ---------------------------------------------------------------------------
# experiment specification
# ---------------------------------------------------------------------------

def _load_schema() -> dict:
    text = (
        importlib.resources.files("trimlab") / "schemas" / "experiment.schema.json"
    ).read_text()
    return json.loads(text)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    map_name: str
    observable_spec: dict
    orbit_mode: str
    grid: CheckpointGrid
    seed_count: int
    seed_base: int
    plan_config: dict
    tail_config: dict | None = None
    eps: float = 0.1
    W: float = 4.0
    psi_name: str = "square"
    V: float = 2.0
    reference: float = 1.0
    capacity: int | None = None
    output: str | None = None
    acceptance: dict = field(default_factory=dict)

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentSpec":
        try:
            jsonschema.validate(obj, _load_schema())
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid experiment config: {exc.message}") from exc
        g = obj["grid"]
        if "checkpoints" in g:
            grid = CheckpointGrid(tuple(g["checkpoints"]))
        else:
            grid = CheckpointGrid.geometric(g["start"], g["ratio"], g["count"])
        spec = cls(
            name=obj["name"],
            map_name=obj["map"],
            observable_spec=obj["observable"],
            orbit_mode=obj["orbitMode"],
            grid=grid,
            seed_count=obj["seeds"]["count"],
            seed_base=obj["seeds"]["base"],
            plan_config=obj["plan"],
            tail_config=obj.get("tail"),
            eps=obj.get("eps", 0.1),
            W=obj.get("W", 4.0),
            psi_name=obj.get("psi", "square"),
            V=obj.get("V", 2.0),
            reference=obj.get("reference", 1.0),
            capacity=obj.get("capacity"),
            output=obj.get("output"),
            acceptance=obj.get("acceptance", {}),
        )
        spec.validate_semantics()
        return spec

    @classmethod
    def from_path(cls, path) -> "ExperimentSpec":
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(obj)

    def validate_semantics(self) -> None:
        if self.orbit_mode == "exactBits" and self.map_name != "doubling":
            raise ConfigError("exactBits orbits require the doubling map")
        if self.orbit_mode == "exactCF":
            if self.map_name != "gauss":
                raise ConfigError("exactCF orbits require the gauss map")
            if self.observable_spec["kind"] != "floorReciprocal":
                raise ConfigError("exactCF orbits serve the floorReciprocal observable")
        src = self.plan_config["source"]
        if src == "general" and "f" not in self.plan_config:
            raise ConfigError("general plan needs a truncation schedule 'f'")
        if src in ("regvar", "fixedB") and "b" not in self.plan_config:
            raise ConfigError(f"{src} plan needs a trim schedule 'b'")
        if src == "fixedR" and "r" not in self.plan_config:
            raise ConfigError("fixedR plan needs the light trim count 'r'")
        if src in ("general", "regvar") and self.tail() is None:
            raise ConfigError(f"{src} plan needs a tail model")

    def tail(self) -> TailModel | None:
        if self.tail_config is not None:
            return TailModel.from_json(self.tail_config)
        obs = self.observable()
        return obs.tail

    def observable(self) -> Observable:
        return make_observable(self.observable_spec)

    def interval_map(self) -> IntervalMap:
        return make_map(self.map_name)

    def psi(self) -> PsiFunction:
        return PsiFunction(self.psi_name)

    def resolved(self) -> dict:
        out = {
            "name": self.name,
            "map": self.map_name,
            "observable": self.observable_spec,
            "orbitMode": self.orbit_mode,
            "grid": {"checkpoints": list(self.grid)},
            "seeds": {"count": self.seed_count, "base": self.seed_base},
            "plan": self.plan_config,
            "eps": self.eps,
            "W": self.W,
            "psi": self.psi_name,
            "V": self.V,
            "reference": self.reference,
        }
        if self.tail_config is not None:
            out["tail"] = self.tail_config
        if self.capacity is not None:
            out["capacity"] = self.capacity
        if self.output is not None:
            out["output"] = self.output
        if self.acceptance:
            out["acceptance"] = self.acceptance
        return out


# ---------------------------------------------------------------------------
# plan construction
# ---------------------------------------------------------------------------

def build_plan(spec: ExperimentSpec) -> TrimmingPlan:
    cfg = spec.plan_config
    src = cfg["source"]
    grid = spec.grid
    tail = spec.tail()
    psi = spec.psi()
    cps = list(grid)

    if src == "general":
        f_expr = compile_schedule(cfg["f"])
        return general_trimming_plan(
            tail, lambda n: float(f_expr(n=n)), grid,
            eps=spec.eps, W=spec.W, psi=psi,
        )

    if src == "regvar":
        b_expr = compile_schedule(cfg["b"])
        b = [int(b_expr(n=n)) for n in cps]
        f = threshold_from_trim(tail, b, grid, W=spec.W, eps=spec.eps, psi=psi)
        a = tuple(n * tail.tail_probability(fn) for n, fn in zip(cps, f))
        d = regvar_norming(tail.alpha, tail.L, b, grid)
        return TrimmingPlan(
            grid=grid, f=f, a=a, b=tuple(b), d=d,
            gamma=tuple(bi - ai for ai, bi in zip(a, b)),
            eps=spec.eps, W=spec.W, psi=psi, provenance="regvarTheorem",
        )

    if src == "fixedB":
        b_expr = compile_schedule(cfg["b"])
        b = [int(b_expr(n=n)) for n in cps]
        truncation = cfg.get("truncation", "fromTrim")
        if truncation == "fromTrim":
            if tail is None:
                raise ConfigError("fromTrim truncation needs a tail model")
            f = threshold_from_trim(tail, b, grid, W=spec.W, eps=spec.eps, psi=psi)
            a = tuple(n * tail.tail_probability(fn) for n, fn in zip(cps, f))
        else:
            f = tuple(math.inf for _ in cps)
            a = tuple(0.0 for _ in cps)
        norming = cfg.get("norming", "regvar")
        if norming == "regvar":
            if tail is None:
                raise ConfigError("regvar norming needs a tail model")
            d = regvar_norming(tail.alpha, tail.L, b, grid)
        else:
            d_expr = compile_schedule(norming, variables=("n", "b"))
            d = tuple(float(d_expr(n=n, b=bi)) for n, bi in zip(cps, b))
        return TrimmingPlan(
            grid=grid, f=f, a=a, b=tuple(b), d=d,
            gamma=tuple(bi - ai for ai, bi in zip(a, b)),
            eps=spec.eps, W=spec.W, psi=psi, provenance="userFixed",
        )

    if src == "fixedR":
        r = int(cfg["r"])
        d_expr = compile_schedule(cfg.get("norming", "n*log(n)"), variables=("n", "b"))
        return TrimmingPlan(
            grid=grid,
            f=tuple(math.inf for _ in cps),
            a=tuple(0.0 for _ in cps),
            b=tuple(r for _ in cps),
            d=tuple(float(d_expr(n=n, b=r)) for n in cps),
            gamma=tuple(float(r) for _ in cps),
            eps=spec.eps, W=spec.W, psi=psi, provenance="userFixed",
        )

    raise ConfigError(f"unknown plan source {src!r}")


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResultRow:
    seed: int
    n: int
    S: float
    S_trim: float
    T_trunc: float
    exceed_count: int
    b_n: int
    f_n: float
    ratio_trim: float
    ratio_trunc: float
    dev_B: float
    allowance_B: float
    flag: str


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    plan: TrimmingPlan
    rows: tuple[ResultRow, ...]


def _seed_values(spec: ExperimentSpec, index: int, n_max: int) -> np.ndarray:
    """Observable values along one seeded orbit, deterministic per index."""
    seed = (spec.seed_base, index)
    obs = spec.observable()
    if spec.orbit_mode == "exactCF":
        return cf_digits(seed, n_max)
    if spec.orbit_mode == "exactBits":
        return np.asarray(obs(exact_doubling_orbit(seed, n_max)), dtype=np.float64)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    interval_map = spec.interval_map()
    x = sample_point(interval_map, rng)
    orbit = np.empty(n_max)
    for i in range(n_max):
        orbit[i] = x
        x = interval_map.step(x)
    return np.asarray(obs(orbit), dtype=np.float64)


_MAX_CAPACITY_RETRIES = 3


def _profile_seed(spec: ExperimentSpec, plan: TrimmingPlan, index: int):
    n_max = list(spec.grid)[-1]
    values = _seed_values(spec, index, n_max)
    capacity = spec.capacity or default_capacity(max(plan.b))
    for _ in range(_MAX_CAPACITY_RETRIES + 1):
        records = streaming_profile(
            iter(np.array_split(values, max(1, values.size // (1 << 16)))),
            spec.grid, list(plan.b), list(plan.f), capacity=capacity,
        )
        if not any(r.flag for r in records):
            return records
        capacity *= 4  # two-pass fallback: regenerate with more headroom
    return records


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    obs = spec.observable()
    report = validate_observable(obs, l_grid=[10.0, 1e3, 1e6])
    if not report.passed:
        raise ConfigError(f"observable failed validation: {report.detail}")
    plan = build_plan(spec)
    tail = spec.tail()
    psi = spec.psi()
    cps = list(spec.grid)
    expected_trunc = []
    for n, f_n in zip(cps, plan.f):
        if tail is not None and math.isfinite(f_n):
            expected_trunc.append(n * tail.truncated_mean(f_n))
        else:
            expected_trunc.append(math.nan)
    allowance = [
        spec.V * c_function(max(a_n, 1.0), n, spec.eps, psi)
        for n, a_n in zip(cps, plan.a)
    ]

    rows: list[ResultRow] = []
    for index in range(spec.seed_count):
        records = _profile_seed(spec, plan, index)
        for rec, a_n, d_n, et, al in zip(
            records, plan.a, plan.d, expected_trunc, allowance
        ):
            if not rec.flag:
                _assert_sandwich(rec, index)
            rows.append(
                ResultRow(
                    seed=index,
                    n=rec.n,
                    S=rec.total,
                    S_trim=rec.trimmed,
                    T_trunc=rec.truncated,
                    exceed_count=rec.exceed_count,
                    b_n=rec.b,
                    f_n=rec.f,
                    ratio_trim=rec.trimmed / d_n,
                    ratio_trunc=rec.truncated / et if et == et else math.nan,
                    dev_B=abs(rec.exceed_count - a_n),
                    allowance_B=al,
                    flag=rec.flag,
                )
            )
    return ExperimentResult(spec=spec, plan=plan, rows=tuple(rows))


def _assert_sandwich(rec, seed: int) -> None:
    """S^b <= T^f exactly when exceedCount <= b (weak on both sides)."""
    if rec.exceed_count <= rec.b:
        ok = rec.trimmed <= rec.truncated
    else:
        ok = rec.trimmed >= rec.truncated
    if not ok:
        raise InvariantViolation(
            f"sandwich violated at seed={seed} n={rec.n}: "
            f"S^b={rec.trimmed!r}, T^f={rec.truncated!r}, "
            f"exceed={rec.exceed_count}, b={rec.b}"
        )


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def summarize(result: ExperimentResult, late_window: float = 1 / 3) -> dict:
    """Per-checkpoint medians/IQRs, trend over the grid and the
    Property-B frequency of allowance exceedances."""
    if not result.rows:
        raise ValueError("empty result")
    ref = result.spec.reference
    cps = list(result.spec.grid)
    per_cp = {}
    for n in cps:
        ratios = np.array([r.ratio_trim for r in result.rows if r.n == n])
        trunc = np.array(
            [r.ratio_trunc for r in result.rows if r.n == n and r.ratio_trunc == r.ratio_trunc]
        )
        entry = {
            "ratioTrim": {
                "median": float(np.median(ratios)),
                "q25": float(np.quantile(ratios, 0.25)),
                "q75": float(np.quantile(ratios, 0.75)),
            },
            "medianAbsDeviation": float(np.median(np.abs(ratios - ref))),
        }
        if trunc.size:
            entry["ratioTrunc"] = {
                "median": float(np.median(trunc)),
                "q25": float(np.quantile(trunc, 0.25)),
                "q75": float(np.quantile(trunc, 0.75)),
            }
        per_cp[str(n)] = entry
    third = max(1, int(math.ceil(len(cps) * late_window)))
    early = float(np.median(np.abs(
        [r.ratio_trim - ref for r in result.rows if r.n in cps[:third]]
    )))
    late = float(np.median(np.abs(
        [r.ratio_trim - ref for r in result.rows if r.n in cps[-third:]]
    )))
    if late < early:
        trend = "improving"
    elif late == early:
        trend = "flat"
    else:
        trend = "worsening"
    freq = float(np.mean([r.dev_B > r.allowance_B for r in result.rows]))
    return {
        "name": result.spec.name,
        "reference": ref,
        "perCheckpoint": per_cp,
        "trend": {"earlyMedianAbsDev": early, "lateMedianAbsDev": late,
                  "verdict": trend},
        "propertyBExceedanceFrequency": freq,
        "flaggedRows": int(sum(1 for r in result.rows if r.flag)),
    }


def check_acceptance(result: ExperimentResult, summary: dict) -> list[str]:
    """Evaluate the config's optional acceptance block; returns failures."""
    acc = result.spec.acceptance
    failures = []
    if not acc:
        return failures
    cps = list(result.spec.grid)
    if "band" in acc:
        lo, hi = acc["band"]
        last = [r.ratio_trim for r in result.rows if r.n == cps[-1]]
        frac = float(np.mean([(lo <= x <= hi) for x in last]))
        need = acc.get("minBandFraction", 0.8)
        if frac < need:
            failures.append(
                f"band fraction {frac:.3f} below {need} at n={cps[-1]}"
            )
    if acc.get("requireImprovingTrend") and summary["trend"]["verdict"] != "improving":
        failures.append(f"trend verdict {summary['trend']['verdict']!r}")
    if "propertyBMaxFrequency" in acc:
        freq = summary["propertyBExceedanceFrequency"]
        if freq > acc["propertyBMaxFrequency"]:
            failures.append(
                f"Property-B exceedance frequency {freq:.3f} above "
                f"{acc['propertyBMaxFrequency']}"
            )
    return failures


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_CSV_COLUMNS = (
    "seed", "n", "S", "S_trim", "T_trunc", "exceed_count",
    "b_n", "f_n", "ratio_trim", "ratio_trunc", "dev_B", "allowance_B", "flag",
)


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)  # shortest round-trip representation
    return str(value)


def rows_to_csv(rows) -> str:
    lines = [",".join(_CSV_COLUMNS)]
    for r in sorted(rows, key=lambda r: (r.seed, r.n)):
        lines.append(",".join(_fmt(getattr(r, c)) for c in _CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def emit_results(result: ExperimentResult, summary: dict, path) -> dict:
    out_dir = Path(path) if path else Path(result.spec.output or result.spec.name)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {
            "rows": out_dir / "rows.csv",
            "summary": out_dir / "summary.json",
            "spec": out_dir / "spec.resolved.json",
        }
        files["rows"].write_text(rows_to_csv(result.rows))
        files["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        files["spec"].write_text(
            json.dumps(result.spec.resolved(), indent=2, sort_keys=True) + "\n"
        )
    except OSError as exc:
        raise OSError(f"cannot write results under {out_dir}: {exc}") from exc
    return {k: str(v) for k, v in files.items()}


def plan_to_csv(spec: ExperimentSpec) -> str:
    """CSV view of the plan plus hypothesis-ratio diagnostics."""
    from .sequences import condition_diagnostics

    plan = build_plan(spec)
    tail = spec.tail()
    header = "n,f_n,a_n,b_n,d_n,gamma_n,cond_ratio_a,cond_ratio_regvar,cond_ratio_bn"
    if tail is not None:
        diag = condition_diagnostics(plan, tail)
        extras = zip(
            diag["truncatedMeanGrowth"]["values"],
            diag["regvarThresholdGrowth"]["values"],
            diag["trimCountDivergence"]["values"],
        )
    else:
        extras = ((math.nan, math.nan, math.nan) for _ in plan.f)
    lines = [header]
    for n, f, a, b, d, g, (ra, rr, rb) in zip(
        spec.grid, plan.f, plan.a, plan.b, plan.d, plan.gamma, extras
    ):
        lines.append(
            ",".join([str(n), repr(float(f)), repr(float(a)), str(b),
                      repr(float(d)), repr(float(g)),
                      repr(float(ra)), repr(float(rr)), repr(float(rb))])
        )
    return "\n".join(lines) + "\n"
